//! Dense P-way tensors and the multilinear kernels used by the rest of the crate.
//!
//! Storage follows the natural ordering: the first index varies fastest, so a
//! tensor with dims `(N_1, .., N_P)` and multi-index `(i_1, .., i_P)` sits at
//! flat offset `i_1 + N_1 * (i_2 + N_2 * (..))`. Matricizations keep that
//! ordering for the column index, which makes
//! `M_(p) = A_p * khatri_rao(A, skip = {p})^T` hold exactly for a Kruskal model.
//!
//! Modes are zero-based throughout the Rust API.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PcpError, Result};

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(PcpError::InvalidArgument(format!(
                "tensor dims must be a non-empty list of positive sizes, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(PcpError::LengthMismatch {
                what: "tensor data",
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in natural order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for_each_index(dims, |_, idx| data.push(f(idx)));
        Self {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Checks that every entry is a non-negative integer.
    pub fn validate_counts(&self) -> Result<()> {
        for (index, &value) in self.data.iter().enumerate() {
            if !(value >= 0.0 && value.fract() == 0.0 && value.is_finite()) {
                return Err(PcpError::NotACount { index, value });
            }
        }
        Ok(())
    }

    pub fn validate_positive(&self, what: &'static str) -> Result<()> {
        for (index, &value) in self.data.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PcpError::NonPositive { what, index, value });
            }
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(PcpError::ShapeMismatch {
                expected: self.dims.clone(),
                found: other.dims.clone(),
            });
        }
        Ok(())
    }

    pub fn mul(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    /// Elementwise division; a zero denominator is reported with its flat index.
    pub fn div(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        let mut data = Vec::with_capacity(self.data.len());
        for (index, (a, b)) in self.data.iter().zip(&other.data).enumerate() {
            if *b == 0.0 {
                return Err(PcpError::DivisionByZero { index });
            }
            data.push(a / b);
        }
        Ok(Self {
            dims: self.dims.clone(),
            data,
        })
    }

    /// Elementwise power `X^{*k}`.
    pub fn powf(&self, k: f64) -> DenseTensor {
        self.map(|v| v.powf(k))
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Mode-`p` marginal `X_(p) 1`.
    pub fn marginal(&self, mode: usize) -> Result<Vec<f64>> {
        check_mode(mode, self.order())?;
        let (lo, n, _) = split_dims(&self.dims, mode);
        let mut out = vec![0.0; n];
        for (flat, &v) in self.data.iter().enumerate() {
            out[(flat / lo) % n] += v;
        }
        Ok(out)
    }
}

/// A matricization `X_(p)` (or a pair matricization) together with what is
/// needed to fold it back.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrix {
    row_modes: Vec<usize>,
    source_dims: Vec<usize>,
    pub matrix: Matrix,
}

impl ModeMatrix {
    pub fn row_modes(&self) -> &[usize] {
        &self.row_modes
    }

    pub fn source_dims(&self) -> &[usize] {
        &self.source_dims
    }

    /// Inverse matricization.
    pub fn fold(&self) -> DenseTensor {
        let (row_strides, col_strides) = unfold_strides(&self.source_dims, &self.row_modes);
        let mut data = vec![0.0; self.source_dims.iter().product()];
        for_each_index(&self.source_dims, |flat, idx| {
            let (r, c) = unfold_position(idx, &row_strides, &col_strides);
            data[flat] = self.matrix[(r, c)];
        });
        DenseTensor {
            dims: self.source_dims.clone(),
            data,
        }
    }
}

fn check_mode(mode: usize, order: usize) -> Result<()> {
    if mode >= order {
        return Err(PcpError::ModeOutOfRange { mode, order });
    }
    Ok(())
}

/// `(prod of dims before mode, dims[mode], prod of dims after mode)`.
fn split_dims(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let lo = dims[..mode].iter().product();
    let hi = dims[mode + 1..].iter().product();
    (lo, dims[mode], hi)
}

/// Visits every multi-index of `dims` in natural order with its flat offset.
pub fn for_each_index(dims: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = dims.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    for flat in 0..total {
        f(flat, &idx);
        for (i, &n) in idx.iter_mut().zip(dims) {
            *i += 1;
            if *i < n {
                break;
            }
            *i = 0;
        }
    }
}

/// Per-mode strides into the row and column index of an unfolding. A stride
/// of zero means the mode does not contribute to that index.
fn unfold_strides(dims: &[usize], row_modes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut row = vec![0; dims.len()];
    let mut col = vec![0; dims.len()];
    let mut s = 1;
    for &m in row_modes {
        row[m] = s;
        s *= dims[m];
    }
    let mut s = 1;
    for (m, &n) in dims.iter().enumerate() {
        if !row_modes.contains(&m) {
            col[m] = s;
            s *= n;
        }
    }
    (row, col)
}

fn unfold_position(idx: &[usize], row_strides: &[usize], col_strides: &[usize]) -> (usize, usize) {
    let mut r = 0;
    let mut c = 0;
    for ((&i, &rs), &cs) in idx.iter().zip(row_strides).zip(col_strides) {
        r += i * rs;
        c += i * cs;
    }
    (r, c)
}

fn unfold(t: &DenseTensor, row_modes: &[usize]) -> ModeMatrix {
    let rows: usize = row_modes.iter().map(|&m| t.dims[m]).product();
    let cols = t.len() / rows;
    let (row_strides, col_strides) = unfold_strides(&t.dims, row_modes);
    let mut matrix = Matrix::zeros(rows, cols);
    for_each_index(&t.dims, |flat, idx| {
        let (r, c) = unfold_position(idx, &row_strides, &col_strides);
        matrix[(r, c)] = t.data[flat];
    });
    ModeMatrix {
        row_modes: row_modes.to_vec(),
        source_dims: t.dims.clone(),
        matrix,
    }
}

/// Mode-`mode` matricization `X_(p)`: `N_p` rows, and columns running over
/// the remaining indices in natural order.
pub fn matricize(t: &DenseTensor, mode: usize) -> Result<ModeMatrix> {
    check_mode(mode, t.order())?;
    Ok(unfold(t, &[mode]))
}

/// Matricization `Y_(k,l)` with row index `i_k + N_k * i_l`.
pub fn matricize_pair(t: &DenseTensor, k: usize, l: usize) -> Result<ModeMatrix> {
    let order = t.order();
    if k >= l || order <= 2 || l >= order {
        return Err(PcpError::InvalidModePair { k, l, order });
    }
    Ok(unfold(t, &[k, l]))
}

/// Khatri-Rao product of `mats` taken in decreasing mode order
/// (`A_P ⊙ .. ⊙ A_1`), leaving out every mode listed in `skip`.
pub fn khatri_rao(mats: &[&Matrix], skip: &[usize]) -> Result<Matrix> {
    let included: Vec<&Matrix> = mats
        .iter()
        .enumerate()
        .filter(|(m, _)| !skip.contains(m))
        .map(|(_, a)| *a)
        .collect();
    let first = included.first().ok_or(PcpError::EmptyProduct)?;
    let rank = first.ncols();
    if included.iter().any(|a| a.ncols() != rank) {
        return Err(PcpError::RankMismatch);
    }
    let rows: usize = included.iter().map(|a| a.nrows()).product();
    let mut out = Matrix::zeros(rows, rank);
    let mut col = Vec::with_capacity(rows);
    let mut next = Vec::with_capacity(rows);
    for r in 0..rank {
        col.clear();
        col.extend(first.column(r).iter().copied());
        for a in &included[1..] {
            next.clear();
            for j in 0..a.nrows() {
                let s = a[(j, r)];
                next.extend(col.iter().map(|v| v * s));
            }
            std::mem::swap(&mut col, &mut next);
        }
        out.column_mut(r).copy_from_slice(&col);
    }
    Ok(out)
}

fn contraction_weights(
    dims: &[usize],
    free: &[usize],
    vecs: &[&[f64]],
) -> Result<Vec<Option<Vec<f64>>>> {
    let expected = dims.len() - free.len();
    if vecs.len() != expected {
        return Err(PcpError::LengthMismatch {
            what: "number of contraction vectors",
            expected,
            found: vecs.len(),
        });
    }
    let mut it = vecs.iter();
    let mut weights = Vec::with_capacity(dims.len());
    for (m, &n) in dims.iter().enumerate() {
        if free.contains(&m) {
            weights.push(None);
        } else {
            let v = it.next().expect("count checked above");
            if v.len() != n {
                return Err(PcpError::LengthMismatch {
                    what: "contraction vector",
                    expected: n,
                    found: v.len(),
                });
            }
            weights.push(Some(v.to_vec()));
        }
    }
    Ok(weights)
}

/// `X ×̄_{q≠k} (v_q)`: contracts every mode except `k`. `vecs` holds one vector
/// per remaining mode, in increasing mode order.
pub fn tvc_all_but_one(t: &DenseTensor, vecs: &[&[f64]], k: usize) -> Result<Vec<f64>> {
    check_mode(k, t.order())?;
    let weights = contraction_weights(&t.dims, &[k], vecs)?;
    let mut out = vec![0.0; t.dims[k]];
    for_each_index(&t.dims, |flat, idx| {
        let mut w = t.data[flat];
        for (m, wv) in weights.iter().enumerate() {
            if let Some(v) = wv {
                w *= v[idx[m]];
            }
        }
        out[idx[k]] += w;
    });
    Ok(out)
}

/// `X ×̄_{q≠k,l} (v_q)`: contracts every mode except `k < l`, giving an
/// `N_k × N_l` matrix. Requires an order above two.
pub fn tvc_all_but_two(t: &DenseTensor, vecs: &[&[f64]], k: usize, l: usize) -> Result<Matrix> {
    let order = t.order();
    if k >= l || order <= 2 || l >= order {
        return Err(PcpError::InvalidModePair { k, l, order });
    }
    let weights = contraction_weights(&t.dims, &[k, l], vecs)?;
    let mut out = Matrix::zeros(t.dims[k], t.dims[l]);
    for_each_index(&t.dims, |flat, idx| {
        let mut w = t.data[flat];
        for (m, wv) in weights.iter().enumerate() {
            if let Some(v) = wv {
                w *= v[idx[m]];
            }
        }
        out[(idx[k], idx[l])] += w;
    });
    Ok(out)
}

/// Checked elementwise matrix division.
pub fn matrix_div(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(PcpError::ShapeMismatch {
            expected: vec![a.nrows(), a.ncols()],
            found: vec![b.nrows(), b.ncols()],
        });
    }
    if let Some(index) = b.iter().position(|&v| v == 0.0) {
        return Err(PcpError::DivisionByZero { index });
    }
    Ok(a.component_div(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, row_major: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, row_major)
    }

    fn lcg_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut s = seed;
        DenseTensor::from_fn(dims, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) + 0.1
        })
    }

    #[test]
    fn matrix_matricization_is_identity() {
        // [[1,2],[3,4]] with the column index as the second tensor index.
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m.matrix, mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn cube_mode_one_unfolding() {
        // vec = (x111, x211, x121, x221, x112, x212, x122, x222)
        let t = DenseTensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m.matrix, mat(2, 4, &[1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]));
    }

    #[test]
    fn matricize_rejects_bad_mode() {
        let t = DenseTensor::zeros(&[2, 2]);
        assert!(matches!(matricize(&t, 2), Err(PcpError::ModeOutOfRange { .. })));
    }

    #[test]
    fn pair_matricization_entries() {
        let ones = DenseTensor::filled(&[2, 2, 2], 1.0);
        let m = matricize_pair(&ones, 0, 1).unwrap();
        assert_eq!(m.matrix, Matrix::from_element(4, 2, 1.0));

        let t = lcg_tensor(&[2, 3, 4], 5);
        let m = matricize_pair(&t, 0, 1).unwrap();
        for i1 in 0..2 {
            for i2 in 0..3 {
                for i3 in 0..4 {
                    assert_eq!(m.matrix[(i1 + 2 * i2, i3)], t.get(&[i1, i2, i3]));
                }
            }
        }
        assert!(matricize_pair(&t, 1, 0).is_err());
        assert!(matricize_pair(&DenseTensor::zeros(&[2, 2]), 0, 1).is_err());
    }

    #[test]
    fn pair_matricization_agrees_with_two_mode_contraction() {
        let t = lcg_tensor(&[2, 3, 4], 9);
        let w = [0.3, -1.0, 2.0, 0.5];
        let m = matricize_pair(&t, 0, 1).unwrap();
        let via_pair = &m.matrix * nalgebra::DVector::from_row_slice(&w);
        let direct = tvc_all_but_two(&t, &[&w], 0, 1).unwrap();
        for i1 in 0..2 {
            for i2 in 0..3 {
                let a = via_pair[i1 + 2 * i2];
                let b = direct[(i1, i2)];
                assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn khatri_rao_reverse_order() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let kr = khatri_rao(&[&a, &b], &[]).unwrap();
        assert_eq!(kr.column(0).as_slice(), &[1.0, 3.0, 0.0, 0.0]);
        assert_eq!(kr.column(1).as_slice(), &[0.0, 0.0, 2.0, 4.0]);
        assert_eq!(khatri_rao(&[&a], &[]).unwrap(), a);
        assert_eq!(khatri_rao(&[&a, &b], &[1]).unwrap(), a);
    }

    #[test]
    fn khatri_rao_errors() {
        let a = Matrix::from_element(2, 2, 1.0);
        let b = Matrix::from_element(2, 3, 1.0);
        assert!(matches!(khatri_rao(&[&a, &b], &[]), Err(PcpError::RankMismatch)));
        assert!(matches!(khatri_rao(&[&a], &[0]), Err(PcpError::EmptyProduct)));
    }

    #[test]
    fn khatri_rao_reproduces_cp_matricization() {
        let dims = [3usize, 4, 2];
        let rank = 2;
        let factors: Vec<Matrix> = dims
            .iter()
            .enumerate()
            .map(|(p, &n)| {
                let t = lcg_tensor(&[n, rank], 100 + p as u64);
                Matrix::from_column_slice(n, rank, t.data())
            })
            .collect();
        // Full tensor by explicit sum over components.
        let full = DenseTensor::from_fn(&dims, |idx| {
            (0..rank)
                .map(|r| (0..3).map(|p| factors[p][(idx[p], r)]).product::<f64>())
                .sum()
        });
        let refs: Vec<&Matrix> = factors.iter().collect();
        for p in 0..3 {
            let kr = khatri_rao(&refs, &[p]).unwrap();
            let lhs = &factors[p] * kr.transpose();
            let rhs = matricize(&full, p).unwrap().matrix;
            assert!((&lhs - &rhs).norm() / rhs.norm() < 1e-12);
        }
    }

    #[test]
    fn one_mode_contraction_cases() {
        let ones = DenseTensor::filled(&[2, 2], 1.0);
        assert_eq!(tvc_all_but_one(&ones, &[&[1.0, 1.0]], 0).unwrap(), vec![2.0, 2.0]);

        let a = [1.0, 2.0];
        let b = [3.0, 5.0, 7.0];
        let outer = DenseTensor::from_fn(&[2, 3], |i| a[i[0]] * b[i[1]]);
        let w = [1.0, -1.0, 0.5];
        let btw: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
        let got = tvc_all_but_one(&outer, &[&w], 0).unwrap();
        for i in 0..2 {
            assert!((got[i] - a[i] * btw).abs() < 1e-14);
        }
        assert!(tvc_all_but_one(&outer, &[&[1.0]], 0).is_err());
    }

    #[test]
    fn one_mode_contraction_matches_loops() {
        let t = lcg_tensor(&[3, 3, 3], 3);
        let v = [[0.2, 1.5, -0.7], [1.1, 0.4, 2.2], [0.9, -0.3, 0.6]];
        for k in 0..3 {
            let others: Vec<&[f64]> = (0..3).filter(|&q| q != k).map(|q| &v[q][..]).collect();
            let got = tvc_all_but_one(&t, &others, k).unwrap();
            let mut want = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for l in 0..3 {
                        let idx = [i, j, l];
                        let mut w = t.get(&idx);
                        for q in 0..3 {
                            if q != k {
                                w *= v[q][idx[q]];
                            }
                        }
                        want[idx[k]] += w;
                    }
                }
            }
            for i in 0..3 {
                assert!((got[i] - want[i]).abs() <= 1e-13 * want[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn two_mode_contraction_cases() {
        let ones = DenseTensor::filled(&[2, 2, 2], 1.0);
        let got = tvc_all_but_two(&ones, &[&[1.0, 1.0]], 0, 1).unwrap();
        assert_eq!(got, Matrix::from_element(2, 2, 2.0));

        let (a, b, c) = ([1.0, 2.0], [3.0, 4.0, 5.0], [0.5, 1.5]);
        let t = DenseTensor::from_fn(&[2, 3, 2], |i| a[i[0]] * b[i[1]] * c[i[2]]);
        let w = [2.0, -1.0];
        let ctw = c[0] * w[0] + c[1] * w[1];
        let got = tvc_all_but_two(&t, &[&w], 0, 1).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((got[(i, j)] - ctw * a[i] * b[j]).abs() < 1e-13);
            }
        }
        assert!(tvc_all_but_two(&t, &[&w], 1, 0).is_err());
        assert!(tvc_all_but_two(&DenseTensor::zeros(&[2, 2]), &[], 0, 1).is_err());
    }

    #[test]
    fn two_mode_contraction_matches_loops() {
        let t = lcg_tensor(&[2, 3, 4], 11);
        let w = [0.1, 0.7, -0.2, 1.3];
        let got = tvc_all_but_two(&t, &[&w], 0, 1).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let want: f64 = (0..4).map(|l| t.get(&[i, j, l]) * w[l]).sum();
                assert!((got[(i, j)] - want).abs() <= 1e-13 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn two_mode_contraction_transpose_rule() {
        let t = lcg_tensor(&[2, 3, 4, 2], 13);
        let v0 = [0.4, 1.2];
        let v3 = [2.0, 0.3];
        let a = tvc_all_but_two(&t, &[&v0, &v3], 1, 2).unwrap();
        // Swap the roles of modes 1 and 2 by permuting the tensor.
        let swapped = DenseTensor::from_fn(&[2, 4, 3, 2], |i| t.get(&[i[0], i[2], i[1], i[3]]));
        let b = tvc_all_but_two(&swapped, &[&v0, &v3], 1, 2).unwrap();
        assert!((a.transpose() - b).norm() < 1e-13);
    }

    #[test]
    fn hadamard_ops() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let q = t.div(&t).unwrap();
        assert!(q.data().iter().all(|&v| v == 1.0));
        let m = DenseTensor::new(vec![1, 2], vec![2.0, 4.0]).unwrap();
        assert_eq!(m.powf(-1.0).data(), &[0.5, 0.25]);

        let x = lcg_tensor(&[2, 3], 1);
        let mm = lcg_tensor(&[2, 3], 2);
        let r = x.div(&mm.powf(2.0)).unwrap();
        for i in 0..6 {
            let want = x.data()[i] / (mm.data()[i] * mm.data()[i]);
            assert!((r.data()[i] - want).abs() <= 1e-15 * want.abs());
        }

        let z = DenseTensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(t.div(&z), Err(PcpError::DivisionByZero { index: 1 })));
        assert!(t.mul(&m).is_err());
    }

    #[test]
    fn marginal_matches_contraction() {
        let t = lcg_tensor(&[2, 3, 4], 21);
        for k in 0..3 {
            let ones: Vec<Vec<f64>> = (0..3).filter(|&q| q != k).map(|q| vec![1.0; t.dims()[q]]).collect();
            let refs: Vec<&[f64]> = ones.iter().map(|v| v.as_slice()).collect();
            let a = tvc_all_but_one(&t, &refs, k).unwrap();
            let b = t.marginal(k).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..=4)
    }

    proptest! {
        #[test]
        fn matricize_round_trip(dims in dims_strategy(), seed in any::<u64>()) {
            let t = lcg_tensor(&dims, seed);
            for p in 0..dims.len() {
                let back = matricize(&t, p).unwrap().fold();
                prop_assert_eq!(&back, &t);
            }
        }

        #[test]
        fn contraction_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
            let t = lcg_tensor(&[3, 2, 4], seed);
            let u = [0.5, 1.0];
            let v = [0.2, -0.4];
            let w = [1.0, 2.0, 3.0, 4.0];
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + alpha * b).collect();
            let lhs = tvc_all_but_one(&t, &[&mix, &w], 0).unwrap();
            let a = tvc_all_but_one(&t, &[&u, &w], 0).unwrap();
            let b = tvc_all_but_one(&t, &[&v, &w], 0).unwrap();
            for i in 0..3 {
                let rhs = a[i] + alpha * b[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
