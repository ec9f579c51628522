//! General-rank Fisher information for the PCP model.
//!
//! Both matrices are `P×P` grids of `(k,l)` blocks, each an `R×R` grid of
//! `N_k×N_l` sub-blocks indexed `(r,s)`. Rows follow the packed parameter
//! layout, so entry `(p, j, r)` of `θ` sits at `offset(p) + r·N_p + j`.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PcpError, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{matricize, matricize_pair, tvc_all_but_one, tvc_all_but_two, DenseTensor, Matrix};

pub const DEFAULT_ORDER_CAP: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FisherKind {
    Observed,
    Expected,
}

#[derive(Debug, Clone)]
pub struct FisherMatrix {
    matrix: DMatrix<f64>,
    dims: Vec<usize>,
    rank: usize,
    kind: FisherKind,
}

impl FisherMatrix {
    pub fn from_parts(matrix: DMatrix<f64>, dims: Vec<usize>, rank: usize, kind: FisherKind) -> Self {
        debug_assert_eq!(matrix.nrows(), rank * dims.iter().sum::<usize>());
        Self { matrix, dims, rank, kind }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn kind(&self) -> FisherKind {
        self.kind
    }

    /// Side length `R·ΣN_q`.
    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn offset(&self, p: usize) -> usize {
        self.rank * self.dims[..p].iter().sum::<usize>()
    }

    /// Row of parameter `A_p[j, r]`.
    pub fn index(&self, p: usize, j: usize, r: usize) -> usize {
        self.offset(p) + r * self.dims[p] + j
    }

    /// Copy of the `(k,l,r,s)` sub-block, of size `N_k×N_l`.
    pub fn sub_block(&self, k: usize, l: usize, r: usize, s: usize) -> Matrix {
        let (nk, nl) = (self.dims[k], self.dims[l]);
        self.matrix
            .view((self.index(k, 0, r), self.index(l, 0, s)), (nk, nl))
            .into_owned()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Repr<'a> {
            kind: FisherKind,
            dims: &'a [usize],
            rank: usize,
            order: usize,
            rows: Vec<Vec<f64>>,
        }
        let rows = self
            .matrix
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let repr = Repr {
            kind: self.kind,
            dims: &self.dims,
            rank: self.rank,
            order: self.order(),
            rows,
        };
        serde_json::to_writer(w, &repr)?;
        Ok(())
    }
}

fn check_model_tensor(t: &DenseTensor, model: &KruskalModel) -> Result<()> {
    let dims = model.dims();
    if t.dims() != dims.as_slice() {
        return Err(PcpError::ShapeMismatch {
            expected: dims,
            found: t.dims().to_vec(),
        });
    }
    Ok(())
}

fn check_indices(model: &KruskalModel, k: usize, l: usize, r: usize, s: usize) -> Result<()> {
    let order = model.order();
    for mode in [k, l] {
        if mode >= order {
            return Err(PcpError::ModeOutOfRange { mode, order });
        }
    }
    if r >= model.rank() || s >= model.rank() {
        return Err(PcpError::InvalidArgument(format!(
            "component index ({r}, {s}) out of range for rank {}",
            model.rank()
        )));
    }
    if order < 2 {
        return Err(PcpError::InvalidArgument("Fisher blocks need order at least 2".into()));
    }
    Ok(())
}

fn column(model: &KruskalModel, q: usize, r: usize) -> Vec<f64> {
    model.factor(q).column(r).iter().copied().collect()
}

fn column_product(model: &KruskalModel, q: usize, r: usize, s: usize) -> Vec<f64> {
    let a = model.factor(q);
    a.column(r).component_mul(&a.column(s)).iter().copied().collect()
}

/// `D_{k,l}^{r,s}(Y)`, straight from its definition.
pub fn d_block(y: &DenseTensor, model: &KruskalModel, k: usize, l: usize, r: usize, s: usize) -> Result<Matrix> {
    check_model_tensor(y, model)?;
    check_indices(model, k, l, r, s)?;
    if k > l {
        return Ok(d_block(y, model, l, k, s, r)?.transpose());
    }
    let order = model.order();
    if k == l {
        let vecs: Vec<Vec<f64>> = (0..order).filter(|&q| q != k).map(|q| column_product(model, q, r, s)).collect();
        let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
        let v = tvc_all_but_one(y, &refs, k)?;
        return Ok(Matrix::from_diagonal(&nalgebra::DVector::from_vec(v)));
    }
    let core = if order == 2 {
        matricize(y, k)?.matrix
    } else {
        let vecs: Vec<Vec<f64>> = (0..order)
            .filter(|&q| q != k && q != l)
            .map(|q| column_product(model, q, r, s))
            .collect();
        let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
        tvc_all_but_two(y, &refs, k, l)?
    };
    let outer = model.factor(k).column(s) * model.factor(l).column(r).transpose();
    Ok(outer.component_mul(&core))
}

/// `F_{k,l}^{r,s}` for data `x`, straight from its definition.
pub fn f_block(x: &DenseTensor, model: &KruskalModel, k: usize, l: usize, r: usize, s: usize) -> Result<Matrix> {
    check_model_tensor(x, model)?;
    check_indices(model, k, l, r, s)?;
    let dims = model.dims();
    if k == l || r != s {
        return Ok(Matrix::zeros(dims[k], dims[l]));
    }
    if k > l {
        return Ok(f_block(x, model, l, k, s, r)?.transpose());
    }
    let ratio = x.div(&model.full_tensor())?;
    let order = model.order();
    if order == 2 {
        return Ok(matricize(&ratio, k)?.matrix.map(|v| 1.0 - v));
    }
    let vecs: Vec<Vec<f64>> = (0..order).filter(|&q| q != k && q != l).map(|q| column(model, q, r)).collect();
    let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
    let lam = model.lambda_product_except(&[k, l])[r];
    Ok(tvc_all_but_two(&ratio, &refs, k, l)?.map(|v| lam - v))
}

/// `Y_(k,l)` with rows `j + N_k j'` and the matching `⊙A_{[P]\{k,l}}`; for
/// order two the second factor is a single row of ones.
fn pair_operands(y: &DenseTensor, model: &KruskalModel, k: usize, l: usize) -> Result<(Matrix, Matrix)> {
    if model.order() == 2 {
        Ok((
            Matrix::from_column_slice(y.len(), 1, y.data()),
            Matrix::from_element(1, model.rank(), 1.0),
        ))
    } else {
        Ok((matricize_pair(y, k, l)?.matrix, model.khatri_rao_except(&[k, l])?))
    }
}

fn diagonal_block(y: &DenseTensor, model: &KruskalModel, k: usize) -> Result<Matrix> {
    let nk = model.dims()[k];
    let rank = model.rank();
    let yk = matricize(y, k)?.matrix;
    let b = model.khatri_rao_except(&[k])?;
    let mut out = Matrix::zeros(nk * rank, nk * rank);
    let mut weighted = b.clone();
    for j in 0..nk {
        // G_j = B^T diag(Y_(k)[j,:]) B holds every nonzero of row j's diagonals.
        for (c, mut row) in weighted.row_iter_mut().enumerate() {
            row.copy_from(&(b.row(c) * yk[(j, c)]));
        }
        let g = b.transpose() * &weighted;
        for r in 0..rank {
            for s in 0..rank {
                out[(r * nk + j, s * nk + j)] = g[(r, s)];
            }
        }
    }
    Ok(out)
}

fn off_diagonal_block(
    y: &DenseTensor,
    ratio: Option<&DenseTensor>,
    model: &KruskalModel,
    k: usize,
    l: usize,
) -> Result<Matrix> {
    let dims = model.dims();
    let (nk, nl) = (dims[k], dims[l]);
    let rank = model.rank();
    let (w, c) = pair_operands(y, model, k, l)?;
    let mut pairs = Matrix::zeros(c.nrows(), rank * rank);
    for r in 0..rank {
        for s in 0..rank {
            pairs.set_column(r * rank + s, &c.column(r).component_mul(&c.column(s)));
        }
    }
    let contracted = w * pairs;
    let (ak, al) = (model.factor(k), model.factor(l));
    let mut out = Matrix::zeros(nk * rank, nl * rank);
    for r in 0..rank {
        for s in 0..rank {
            let col = contracted.column(r * rank + s);
            for jl in 0..nl {
                for jk in 0..nk {
                    out[(r * nk + jk, s * nl + jl)] = ak[(jk, s)] * al[(jl, r)] * col[jk + nk * jl];
                }
            }
        }
    }
    if let Some(ratio) = ratio {
        let (wr, c) = pair_operands(ratio, model, k, l)?;
        let t = wr * c;
        let lam = model.lambda_product_except(&[k, l]);
        for r in 0..rank {
            for jl in 0..nl {
                for jk in 0..nk {
                    out[(r * nk + jk, r * nl + jl)] += lam[r] - t[(jk + nk * jl, r)];
                }
            }
        }
    }
    Ok(out)
}

/// Memory needed for a dense matrix of the given side length.
pub fn dense_bytes(order: usize) -> u64 {
    (order as u64) * (order as u64) * 8
}

/// Fisher information: observed at `x` when given, expected otherwise.
pub fn fim(model: &KruskalModel, x: Option<&DenseTensor>) -> Result<FisherMatrix> {
    fim_capped(model, x, DEFAULT_ORDER_CAP)
}

pub fn fim_capped(model: &KruskalModel, x: Option<&DenseTensor>, cap: usize) -> Result<FisherMatrix> {
    let dims = model.dims();
    let rank = model.rank();
    let order = model.order();
    if order < 2 {
        return Err(PcpError::InvalidArgument("Fisher information needs order at least 2".into()));
    }
    let n = model.num_params();
    if n > cap {
        return Err(PcpError::OrderCap {
            order: n,
            cap,
            bytes: dense_bytes(n),
        });
    }
    let mean = model.full_tensor();
    let (y, ratio, kind) = match x {
        Some(x) => {
            check_model_tensor(x, model)?;
            x.validate_counts()?;
            let ratio = x.div(&mean)?;
            let y = ratio.div(&mean)?;
            (y, Some(ratio), FisherKind::Observed)
        }
        None => (mean.map(|m| 1.0 / m), None, FisherKind::Expected),
    };

    let pairs: Vec<(usize, usize)> = (0..order).flat_map(|k| (k..order).map(move |l| (k, l))).collect();
    let blocks: Vec<Matrix> = pairs
        .par_iter()
        .map(|&(k, l)| {
            if k == l {
                diagonal_block(&y, model, k)
            } else {
                off_diagonal_block(&y, ratio.as_ref(), model, k, l)
            }
        })
        .collect::<Result<_>>()?;

    let offsets: Vec<usize> = (0..order).map(|p| rank * dims[..p].iter().sum::<usize>()).collect();
    let mut matrix = DMatrix::zeros(n, n);
    for (&(k, l), block) in pairs.iter().zip(&blocks) {
        matrix
            .view_mut((offsets[k], offsets[l]), block.shape())
            .copy_from(block);
        if k != l {
            matrix
                .view_mut((offsets[l], offsets[k]), (block.ncols(), block.nrows()))
                .copy_from(&block.transpose());
        }
    }
    let sym = (&matrix + matrix.transpose()) * 0.5;
    Ok(FisherMatrix::from_parts(sym, dims, rank, kind))
}

/// `(min(RΣN − L, ΠN), L)` with `L = min(R,N_1,N_2)²` for two modes and
/// `R(P−1)` otherwise.
pub fn conjectured_rank(dims: &[usize], rank: usize) -> (usize, usize) {
    let nullity = if dims.len() == 2 {
        rank.min(dims[0]).min(dims[1]).pow(2)
    } else {
        rank * dims.len().saturating_sub(1)
    };
    let params = rank * dims.iter().sum::<usize>();
    let cells: usize = dims.iter().product();
    (params.saturating_sub(nullity).min(cells), nullity)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankVerdict {
    pub numerical_rank: usize,
    pub conjectured_rank: usize,
    pub nullity: usize,
    pub threshold: f64,
    pub matches: bool,
    /// Eigenvalues in decreasing order.
    pub eigenvalues: Vec<f64>,
}

impl RankVerdict {
    pub fn write_eigenvalues_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,eigenvalue")?;
        for (i, v) in self.eigenvalues.iter().enumerate() {
            writeln!(w, "{i},{v:e}")?;
        }
        Ok(())
    }
}

/// Sorted eigenvalues of a symmetric matrix, largest first.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or(PcpError::EigenNoConvergence)?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Counts eigenvalues above `λ_max·√ε` and compares with the conjectured rank.
pub fn numerical_rank(fim: &FisherMatrix) -> Result<RankVerdict> {
    let eigenvalues = symmetric_eigenvalues(fim.matrix())?;
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let threshold = top * f64::EPSILON.sqrt();
    let numerical_rank = eigenvalues.iter().filter(|&&v| v > threshold).count();
    let (conjectured_rank, nullity) = conjectured_rank(fim.dims(), fim.rank());
    Ok(RankVerdict {
        numerical_rank,
        conjectured_rank,
        nullity,
        threshold,
        matches: numerical_rank == conjectured_rank,
        eigenvalues,
    })
}
