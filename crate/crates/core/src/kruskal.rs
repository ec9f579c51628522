//! The Kruskal (CP) parameter object and its parameter-vector packing.
//!
//! The parameter vector is `[vec(A_1); ..; vec(A_P)]` with each `vec`
//! column-major, so entry `(j, r)` of factor `p` lands at
//! `offset(p) + r * N_p + j`.

use crate::error::{PcpError, Result};
use crate::tensor::{khatri_rao, DenseTensor, Matrix};

/// Entries produced by multiplicative updates are clamped at this value.
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    factors: Vec<Matrix>,
}

/// Column scaling conventions that leave the full tensor unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Move all column weight into factor `p`, leaving `*λ_{[P]\{p}} = 1`.
    AbsorbInto(usize),
    /// Give every factor the same column sums, `λ_q[r] = w_r^{1/P}`.
    EqualSplit,
}

impl KruskalModel {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let first = factors
            .first()
            .ok_or_else(|| PcpError::InvalidArgument("a Kruskal model needs at least one factor".into()))?;
        let rank = first.ncols();
        if rank == 0 {
            return Err(PcpError::InvalidArgument("rank must be at least one".into()));
        }
        if factors.iter().any(|a| a.ncols() != rank) {
            return Err(PcpError::RankMismatch);
        }
        if factors.iter().any(|a| a.nrows() == 0) {
            return Err(PcpError::InvalidArgument("factor with zero rows".into()));
        }
        let mut offset = 0;
        for a in &factors {
            if let Some(i) = a.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(PcpError::NonPositive {
                    what: "factor entries",
                    index: offset + i,
                    value: a[i],
                });
            }
            offset += a.len();
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, p: usize) -> &Matrix {
        &self.factors[p]
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    /// Length of the parameter vector, `R * sum(N_p)`.
    pub fn num_params(&self) -> usize {
        self.factors.iter().map(|a| a.len()).sum()
    }

    /// Start of factor `p` inside the parameter vector.
    pub fn param_offset(&self, p: usize) -> usize {
        self.factors[..p].iter().map(|a| a.len()).sum()
    }

    pub(crate) fn set_factor(&mut self, p: usize, a: Matrix) {
        debug_assert_eq!(a.shape(), self.factors[p].shape());
        self.factors[p] = a;
    }

    /// `⊙A_{[P]\{skip}}` in decreasing mode order.
    pub fn khatri_rao_except(&self, skip: &[usize]) -> Result<Matrix> {
        let refs: Vec<&Matrix> = self.factors.iter().collect();
        khatri_rao(&refs, skip)
    }

    pub fn full_tensor(&self) -> DenseTensor {
        let dims = self.dims();
        // M_(1) = A_1 (⊙A_{[P]\{1}})^T, whose column-major storage is vec(M).
        let data = if self.order() == 1 {
            self.factors[0].column_sum().as_slice().to_vec()
        } else {
            let kr = self.khatri_rao_except(&[0]).expect("validated model");
            (&self.factors[0] * kr.transpose()).as_slice().to_vec()
        };
        DenseTensor::new(dims, data).expect("shape by construction")
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for a in &self.factors {
            theta.extend_from_slice(a.as_slice());
        }
        theta
    }

    pub fn unpack(theta: &[f64], dims: &[usize], rank: usize) -> Result<Self> {
        let expected = rank * dims.iter().sum::<usize>();
        if theta.len() != expected {
            return Err(PcpError::LengthMismatch {
                what: "parameter vector",
                expected,
                found: theta.len(),
            });
        }
        if let Some(index) = theta.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(PcpError::NonPositive {
                what: "parameter vector",
                index,
                value: theta[index],
            });
        }
        let mut factors = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for &n in dims {
            factors.push(Matrix::from_column_slice(n, rank, &theta[offset..offset + n * rank]));
            offset += n * rank;
        }
        Self::new(factors)
    }

    /// `λ_p = A_p^T 1`.
    pub fn column_sums(&self, p: usize) -> Vec<f64> {
        self.factors[p].row_sum().iter().copied().collect()
    }

    /// `*λ_{[P]\S}`: elementwise product of the column sums of every factor
    /// not listed in `skip`.
    pub fn lambda_product_except(&self, skip: &[usize]) -> Vec<f64> {
        let mut out = vec![1.0; self.rank()];
        for (q, a) in self.factors.iter().enumerate() {
            if skip.contains(&q) {
                continue;
            }
            for (r, o) in out.iter_mut().enumerate() {
                *o *= a.column(r).sum();
            }
        }
        out
    }

    /// Per-component weights `Π_q λ_q[r]`.
    pub fn component_weights(&self) -> Vec<f64> {
        self.lambda_product_except(&[])
    }

    /// `Σ_i m_i`, without forming the full tensor.
    pub fn total_mass(&self) -> f64 {
        self.component_weights().iter().sum()
    }

    pub fn normalize(&self, scheme: Normalization) -> Self {
        let order = self.order();
        let rank = self.rank();
        let sums: Vec<Vec<f64>> = (0..order).map(|q| self.column_sums(q)).collect();
        let weights = self.component_weights();
        let mut factors = self.factors.clone();
        for (q, a) in factors.iter_mut().enumerate() {
            for r in 0..rank {
                let scale = match scheme {
                    Normalization::AbsorbInto(p) if q == p => weights[r] / sums[q][r],
                    Normalization::AbsorbInto(_) => 1.0 / sums[q][r],
                    Normalization::EqualSplit => weights[r].powf(1.0 / order as f64) / sums[q][r],
                };
                a.column_mut(r).scale_mut(scale);
            }
        }
        Self { factors }
    }

    /// Multiplies column `r` of factor `q` by `scales[q][r]`.
    pub fn rescale_columns(&self, scales: &[Vec<f64>]) -> Result<Self> {
        let mut factors = self.factors.clone();
        for (a, s) in factors.iter_mut().zip(scales) {
            for (r, &c) in s.iter().enumerate() {
                a.column_mut(r).scale_mut(c);
            }
        }
        Self::new(factors)
    }
}
