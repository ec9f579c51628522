//! Closed-form inference for rank-one PCP models: the MLE, its simplex
//! parameterization, the rank-one Fisher matrices, and the identifiability
//! structure of the expected Fisher matrix (reduced information, nullspace
//! basis and range projector).

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{PcpError, Result};
use crate::fisher::{numerical_rank, FisherKind, FisherMatrix};
use crate::kruskal::KruskalModel;
use crate::tensor::{DenseTensor, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneModel {
    factors: Vec<Vec<f64>>,
}

impl RankOneModel {
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self> {
        if factors.is_empty() || factors.iter().any(|a| a.is_empty()) {
            return Err(PcpError::InvalidArgument("rank-one model needs non-empty factors".into()));
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

    pub fn from_kruskal(m: &KruskalModel) -> Result<Self> {
        if m.rank() != 1 {
            return Err(PcpError::InvalidArgument(format!("expected rank 1, got {}", m.rank())));
        }
        Self::new(m.factors().iter().map(|a| a.as_slice().to_vec()).collect())
    }

    pub fn to_kruskal(&self) -> KruskalModel {
        KruskalModel::new(
            self.factors
                .iter()
                .map(|a| Matrix::from_column_slice(a.len(), 1, a))
                .collect(),
        )
        .expect("positive by invariant")
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    pub fn factor(&self, p: usize) -> &[f64] {
        &self.factors[p]
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.len()).collect()
    }

    /// `λ_p = 1^T a_p`.
    pub fn lambda_p(&self, p: usize) -> f64 {
        self.factors[p].iter().sum()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        (0..self.order()).map(|p| self.lambda_p(p)).collect()
    }

    /// `λ = Π_p λ_p`, the total mass of the model.
    pub fn lambda(&self) -> f64 {
        self.lambdas().iter().product()
    }

    pub fn pack(&self) -> Vec<f64> {
        self.factors.concat()
    }

    pub fn full_tensor(&self) -> DenseTensor {
        self.to_kruskal().full_tensor()
    }

    /// Simplex representative: `a_1 λ/λ_1` and `a_p / λ_p` for `p ≥ 2`.
    pub fn to_simplex(&self) -> Self {
        let lambdas = self.lambdas();
        let total: f64 = lambdas.iter().product();
        let factors = self
            .factors
            .iter()
            .enumerate()
            .map(|(p, a)| {
                let s = if p == 0 { total / lambdas[0] } else { 1.0 / lambdas[p] };
                a.iter().map(|v| v * s).collect()
            })
            .collect();
        Self { factors }
    }

    /// Equal-split representative: every `λ_p = λ^{1/P}`.
    pub fn to_equal_split(&self) -> Self {
        let lambdas = self.lambdas();
        let root = lambdas.iter().product::<f64>().powf(1.0 / self.order() as f64);
        let factors = self
            .factors
            .iter()
            .zip(&lambdas)
            .map(|(a, l)| a.iter().map(|v| v * root / l).collect())
            .collect();
        Self { factors }
    }

    fn check_data(&self, x: &DenseTensor) -> Result<()> {
        let dims = self.dims();
        if x.dims() != dims.as_slice() {
            return Err(PcpError::ShapeMismatch {
                expected: dims,
                found: x.dims().to_vec(),
            });
        }
        Ok(())
    }
}

/// Mode marginals `x_p = X_(p) 1`, rejecting any zero entry.
pub fn positive_marginals(x: &DenseTensor) -> Result<Vec<Vec<f64>>> {
    (0..x.order())
        .map(|p| {
            let xp = x.marginal(p)?;
            if let Some(index) = xp.iter().position(|&v| !(v > 0.0)) {
                return Err(PcpError::ZeroMarginal { mode: p, index });
            }
            Ok(xp)
        })
        .collect()
}

/// Closed-form rank-one MLE. Returns the simplex-parameterized factors
/// (`â_1 = x_1`, `â_p = x_p / Σx`) and `M̂ = (Σx)^{−(P−1)} x_1 ∘ .. ∘ x_P`.
pub fn mle_rank1(x: &DenseTensor) -> Result<(RankOneModel, DenseTensor)> {
    let marginals = positive_marginals(x)?;
    let total = x.sum();
    let factors: Vec<Vec<f64>> = marginals
        .into_iter()
        .enumerate()
        .map(|(p, xp)| if p == 0 { xp } else { xp.iter().map(|v| v / total).collect() })
        .collect();
    let model = RankOneModel { factors };
    let mhat = model.full_tensor();
    Ok((model, mhat))
}

/// `Σ_p x_p^T log a_p − λ − Σ_i log(x_i!)`, equal to the general
/// loglikelihood at rank one.
pub fn rank1_loglik(x: &DenseTensor, m: &RankOneModel) -> Result<f64> {
    m.check_data(x)?;
    let mut ll = -m.lambda();
    for p in 0..m.order() {
        let xp = x.marginal(p)?;
        ll += xp
            .iter()
            .zip(m.factor(p))
            .map(|(xi, a)| if *xi == 0.0 { 0.0 } else { xi * a.ln() })
            .sum::<f64>();
    }
    ll -= x.data().iter().map(|&v| ln_gamma(v + 1.0)).sum::<f64>();
    Ok(ll)
}

/// Gradient blocks `x_p ⊘ a_p − (Π_{q≠p} λ_q) 1`.
pub fn rank1_gradient(x: &DenseTensor, m: &RankOneModel) -> Result<Vec<f64>> {
    m.check_data(x)?;
    let lambdas = m.lambdas();
    let mut out = Vec::new();
    for p in 0..m.order() {
        let others: f64 = lambdas.iter().enumerate().filter(|(q, _)| *q != p).map(|(_, l)| l).product();
        let xp = x.marginal(p)?;
        out.extend(xp.iter().zip(m.factor(p)).map(|(xi, a)| xi / a - others));
    }
    Ok(out)
}

fn block_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    offs.push(0);
    for n in dims {
        acc += n;
        offs.push(acc);
    }
    offs
}

/// Assembles the rank-one Fisher-type matrix with diagonal blocks
/// `diag(diag_p)` and off-diagonal blocks `λ/(λ_p λ_q) 1 1^T`.
fn assemble(m: &RankOneModel, diag: &[Vec<f64>]) -> DMatrix<f64> {
    let dims = m.dims();
    let offs = block_offsets(&dims);
    let lambdas = m.lambdas();
    let total: f64 = lambdas.iter().product();
    let n = offs[dims.len()];
    let mut out = DMatrix::zeros(n, n);
    for p in 0..dims.len() {
        for q in 0..dims.len() {
            if p == q {
                for (j, d) in diag[p].iter().enumerate() {
                    out[(offs[p] + j, offs[p] + j)] = *d;
                }
            } else {
                let v = total / (lambdas[p] * lambdas[q]);
                out.view_mut((offs[p], offs[q]), (dims[p], dims[q])).fill(v);
            }
        }
    }
    out
}

/// Negative Hessian of the rank-one loglikelihood is the observed Fisher
/// matrix; this returns the Hessian itself.
pub fn rank1_hessian(x: &DenseTensor, m: &RankOneModel) -> Result<DMatrix<f64>> {
    Ok(-rank1_observed(x, m)?)
}

fn rank1_observed(x: &DenseTensor, m: &RankOneModel) -> Result<DMatrix<f64>> {
    m.check_data(x)?;
    let diag: Vec<Vec<f64>> = (0..m.order())
        .map(|p| {
            let xp = x.marginal(p)?;
            Ok(xp.iter().zip(m.factor(p)).map(|(xi, a)| xi / (a * a)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(assemble(m, &diag))
}

fn rank1_expected(m: &RankOneModel) -> DMatrix<f64> {
    let total = m.lambda();
    let diag: Vec<Vec<f64>> = (0..m.order())
        .map(|p| {
            let lp = m.lambda_p(p);
            m.factor(p).iter().map(|a| total / (lp * a)).collect()
        })
        .collect();
    assemble(m, &diag)
}

/// Rank-one Fisher matrix: observed when `x` is given, expected otherwise.
pub fn rank1_fim(m: &RankOneModel, x: Option<&DenseTensor>) -> Result<FisherMatrix> {
    let dims = m.dims();
    match x {
        Some(x) => Ok(FisherMatrix::from_parts(rank1_observed(x, m)?, dims, 1, FisherKind::Observed)),
        None => Ok(FisherMatrix::from_parts(rank1_expected(m), dims, 1, FisherKind::Expected)),
    }
}

/// Diagonal of `Γ` with `θ̃ = Γ θ` the equal-split representative:
/// block `p` is `λ^{1/P} λ_p^{-1} I`.
pub fn equal_split_gamma(m: &RankOneModel) -> Vec<f64> {
    let root = m.lambda().powf(1.0 / m.order() as f64);
    (0..m.order())
        .flat_map(|p| std::iter::repeat_n(root / m.lambda_p(p), m.factor(p).len()))
        .collect()
}

/// Congruence `Γ I Γ^T` for a positive diagonal `Γ`.
pub fn rescale_fim(fim: &FisherMatrix, gamma: &[f64]) -> Result<FisherMatrix> {
    let n = fim.order();
    if gamma.len() != n {
        return Err(PcpError::LengthMismatch {
            what: "scaling diagonal",
            expected: n,
            found: gamma.len(),
        });
    }
    if let Some(index) = gamma.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(PcpError::NonPositive {
            what: "scaling diagonal",
            index,
            value: gamma[index],
        });
    }
    let mut out = fim.matrix().clone();
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] *= gamma[i] * gamma[j];
        }
    }
    Ok(FisherMatrix::from_parts(out, fim.dims().to_vec(), fim.rank(), fim.kind()))
}

/// Which coordinates of `θ` are dropped to form the reduced vector `θ•`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    /// Mode that keeps all of its entries.
    pub keep_mode: usize,
    /// Entry removed from each other mode (indexed by mode; ignored for `keep_mode`).
    pub drop_entry: Vec<usize>,
}

impl Partition {
    /// Keep all of `a_1`, drop the first entry of every other factor.
    pub fn first_entries(order: usize) -> Self {
        Self {
            keep_mode: 0,
            drop_entry: vec![0; order],
        }
    }

    fn dropped_indices(&self, dims: &[usize]) -> Result<Vec<usize>> {
        if self.keep_mode >= dims.len() || self.drop_entry.len() != dims.len() {
            return Err(PcpError::InvalidArgument("partition does not match the model order".into()));
        }
        let offs = block_offsets(dims);
        let mut out = Vec::new();
        for (p, &n) in dims.iter().enumerate() {
            if p == self.keep_mode {
                continue;
            }
            if self.drop_entry[p] >= n {
                return Err(PcpError::InvalidArgument(format!(
                    "drop entry {} out of range for mode {p}",
                    self.drop_entry[p]
                )));
            }
            out.push(offs[p] + self.drop_entry[p]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifiabilityReport {
    /// `r = Σ N_p − P + 1`.
    pub reduced_dim: usize,
    /// Numerical rank of the full expected Fisher matrix.
    pub numerical_rank: usize,
    /// `‖I_N − I_{F,N} I_F^{-1} I_{F,N}^T‖_F`.
    pub schur_residual: f64,
    pub schur_reference: f64,
    /// Largest `‖I(θ) h‖` over columns `h` of `H`.
    pub nullspace_residual: f64,
    pub fim_norm: f64,
    /// Indices of `θ•` inside `θ`, followed by the dropped ones.
    #[serde(skip)]
    pub kept: Vec<usize>,
    #[serde(skip)]
    pub dropped: Vec<usize>,
    #[serde(skip)]
    pub reduced_info: DMatrix<f64>,
    #[serde(skip)]
    pub cross_info: DMatrix<f64>,
    #[serde(skip)]
    pub dropped_info: DMatrix<f64>,
    /// Nullspace basis of `I(θ)` in the original `θ` ordering.
    #[serde(skip)]
    pub nullspace: DMatrix<f64>,
    /// Orthogonal projector onto the range of `I(θ)`.
    #[serde(skip)]
    pub projector: DMatrix<f64>,
}

impl IdentifiabilityReport {
    /// `P θ = θ − H s` with `H^T H s = H^T θ`.
    pub fn project(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let h = &self.nullspace;
        let t = DVector::from_column_slice(theta);
        let hth = h.transpose() * h;
        let chol = Cholesky::new(hth).ok_or(PcpError::Singular("H^T H"))?;
        let s = chol.solve(&(h.transpose() * &t));
        Ok((t - h * s).iter().copied().collect())
    }
}

pub fn identifiability(m: &RankOneModel) -> Result<IdentifiabilityReport> {
    identifiability_with(m, &Partition::first_entries(m.order()))
}

pub fn identifiability_with(m: &RankOneModel, partition: &Partition) -> Result<IdentifiabilityReport> {
    let dims = m.dims();
    let fim = rank1_expected(m);
    let n = fim.nrows();
    let dropped = partition.dropped_indices(&dims)?;
    let kept: Vec<usize> = (0..n).filter(|i| !dropped.contains(i)).collect();
    let r = kept.len();
    let nd = dropped.len();

    let reduced_info = fim.select_rows(&kept).select_columns(&kept);
    let cross_info = fim.select_rows(&dropped).select_columns(&kept);
    let dropped_info = fim.select_rows(&dropped).select_columns(&dropped);

    let chol = Cholesky::new(reduced_info.clone()).ok_or(PcpError::Singular("reduced Fisher information I_F"))?;
    // I_F^{-1} I_{F,N}^T, one column per dropped coordinate.
    let solved = chol.solve(&cross_info.transpose());
    let schur = &dropped_info - &cross_info * &solved;

    let mut nullspace = DMatrix::zeros(n, nd);
    for (c, col) in solved.column_iter().enumerate() {
        for (row, &i) in kept.iter().enumerate() {
            nullspace[(i, c)] = -col[row];
        }
        nullspace[(dropped[c], c)] = 1.0;
    }
    let nullspace_residual = (&fim * &nullspace)
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);

    let hth = nullspace.transpose() * &nullspace;
    let hth_chol = Cholesky::new(hth).ok_or(PcpError::Singular("H^T H"))?;
    let projector = DMatrix::identity(n, n) - &nullspace * hth_chol.solve(&nullspace.transpose());

    let verdict = numerical_rank(&FisherMatrix::from_parts(fim.clone(), dims, 1, FisherKind::Expected))?;
    debug_assert_eq!(r + nd, n);

    Ok(IdentifiabilityReport {
        reduced_dim: r,
        numerical_rank: verdict.numerical_rank,
        schur_residual: schur.norm(),
        schur_reference: dropped_info.norm(),
        nullspace_residual,
        fim_norm: fim.norm(),
        kept,
        dropped,
        reduced_info,
        cross_info,
        dropped_info,
        nullspace,
        projector,
    })
}

/// Explicit inverse of `I_F` for the default partition (keep `a_1`, drop the
/// first entry of every other factor), assembled from rank-one corrections.
pub fn reduced_info_inverse(m: &RankOneModel) -> DMatrix<f64> {
    let dims = m.dims();
    let order = dims.len();
    let lambdas = m.lambdas();
    let total = m.lambda();
    let a1 = DVector::from_column_slice(m.factor(0));
    let tails: Vec<DVector<f64>> = (1..order).map(|p| DVector::from_column_slice(&m.factor(p)[1..])).collect();
    let ratio: Vec<f64> = (1..order).map(|p| lambdas[p] / m.factor(p)[0]).collect();

    let mut offs = vec![0, dims[0]];
    for p in 1..order {
        offs.push(offs[p] + dims[p] - 1);
    }
    let r = offs[order];
    let mut out = DMatrix::zeros(r, r);

    let mut j1 = DMatrix::from_diagonal(&a1.map(|v| v * lambdas[0]));
    let c: f64 = ratio.iter().map(|q| q - 1.0).sum();
    j1 += &a1 * a1.transpose() * c;
    out.view_mut((0, 0), (dims[0], dims[0])).copy_from(&j1);

    for p in 1..order {
        let tail = &tails[p - 1];
        let q = ratio[p - 1];
        let jp = DMatrix::from_diagonal(&tail.map(|v| v * lambdas[p])) + tail * tail.transpose() * q;
        out.view_mut((offs[p], offs[p]), (tail.len(), tail.len())).copy_from(&jp);
        let cross = &a1 * tail.transpose() * (-q);
        out.view_mut((0, offs[p]), (dims[0], tail.len())).copy_from(&cross);
        out.view_mut((offs[p], 0), (tail.len(), dims[0])).copy_from(&cross.transpose());
    }
    out / total
}
