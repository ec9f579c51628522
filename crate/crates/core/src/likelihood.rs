//! Likelihood-layer quantities for the PCP model: loglikelihood, score,
//! the conditional expectations `Z̄_p`, and the EM surrogate `Q` with its
//! gradient.
//!
//! `Q` is reported without its additive constant `C_1(θ̄)`; only differences
//! and derivatives of `Q` carry meaning.

use statrs::function::gamma::ln_gamma;

use crate::error::Result;
use crate::kruskal::KruskalModel;
use crate::tensor::{matricize, DenseTensor, Matrix};

fn check_dims(x: &DenseTensor, m: &KruskalModel) -> Result<()> {
    let dims = m.dims();
    if x.dims() != dims.as_slice() {
        return Err(crate::error::PcpError::ShapeMismatch {
            expected: dims,
            found: x.dims().to_vec(),
        });
    }
    Ok(())
}

/// `Σ_i [x_i log m_i − m_i − log(x_i!)]`, with `0 · log m := 0`.
pub fn loglik(x: &DenseTensor, m: &KruskalModel) -> Result<f64> {
    check_dims(x, m)?;
    Ok(loglik_with_mean(x, &m.full_tensor()))
}

/// Loglikelihood against an explicit mean tensor (shapes must agree).
pub fn loglik_with_mean(x: &DenseTensor, mean: &DenseTensor) -> f64 {
    x.data()
        .iter()
        .zip(mean.data())
        .map(|(&xi, &mi)| {
            let data_term = if xi == 0.0 { 0.0 } else { xi * mi.ln() - ln_gamma(xi + 1.0) };
            data_term - mi
        })
        .sum()
}

/// Score `∇_θ ℓ`, block `p` being `vec((X_(p) ⊘ M_(p) − 1) ⊙A_{[P]\{p}})`.
pub fn score(x: &DenseTensor, m: &KruskalModel) -> Result<Vec<f64>> {
    check_dims(x, m)?;
    let mean = m.full_tensor();
    let centered = DenseTensor::new(
        x.dims().to_vec(),
        x.data().iter().zip(mean.data()).map(|(xi, mi)| xi / mi - 1.0).collect(),
    )?;
    let mut out = Vec::with_capacity(m.num_params());
    for p in 0..m.order() {
        let block = mode_product(&centered, m, p)?;
        out.extend_from_slice(block.as_slice());
    }
    Ok(out)
}

/// `Y_(p) (⊙A_{[P]\{p}})`, the matricized-tensor-times-Khatri-Rao product.
pub(crate) fn mode_product(y: &DenseTensor, m: &KruskalModel, p: usize) -> Result<Matrix> {
    if m.order() == 1 {
        let col = nalgebra::DVector::from_column_slice(y.data());
        return Ok(Matrix::from_fn(col.len(), m.rank(), |i, _| col[i]));
    }
    let yp = matricize(y, p)?;
    let kr = m.khatri_rao_except(&[p])?;
    Ok(yp.matrix * kr)
}

/// The per-mode summaries `Z̄_p = E[Z | X, θ̄]` contracted over all modes but `p`.
#[derive(Debug, Clone)]
pub struct CondExpectation {
    z: Vec<Matrix>,
    theta_bar: KruskalModel,
}

impl CondExpectation {
    pub fn mode(&self, p: usize) -> &Matrix {
        &self.z[p]
    }

    pub fn modes(&self) -> &[Matrix] {
        &self.z
    }

    pub fn theta_bar(&self) -> &KruskalModel {
        &self.theta_bar
    }

    /// Column totals `Σ_i z̄_{r,i}`, identical for every mode.
    pub fn component_totals(&self) -> Vec<f64> {
        self.z[0].row_sum().iter().copied().collect()
    }
}

/// `X ⊘ M̄` with zero counts mapped to zero regardless of the rate.
pub(crate) fn count_ratio(x: &DenseTensor, mean: &DenseTensor) -> DenseTensor {
    let data = x
        .data()
        .iter()
        .zip(mean.data())
        .map(|(&xi, &mi)| if xi == 0.0 { 0.0 } else { xi / mi })
        .collect();
    DenseTensor::new(x.dims().to_vec(), data).expect("same shape")
}

/// `Z̄_p = Ā_p * ([X_(p) ⊘ (Ā_p (⊙Ā_{[P]\{p}})^T)] ⊙Ā_{[P]\{p}})` for every `p`.
pub fn cond_expectation(x: &DenseTensor, m_bar: &KruskalModel) -> Result<CondExpectation> {
    check_dims(x, m_bar)?;
    let ratio = count_ratio(x, &m_bar.full_tensor());
    let z = (0..m_bar.order())
        .map(|p| Ok(m_bar.factor(p).component_mul(&mode_product(&ratio, m_bar, p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CondExpectation {
        z,
        theta_bar: m_bar.clone(),
    })
}

/// `Q(θ, θ̄)` up to `C_1(θ̄)`, assembled over all modes:
/// `Σ_p 1^T (Z̄_p * log A_p) 1 − Σ_r Π_p λ_p[r]`.
pub fn q_value(theta: &KruskalModel, theta_bar: &KruskalModel, x: &DenseTensor) -> Result<f64> {
    let ce = cond_expectation(x, theta_bar)?;
    q_value_from(theta, &ce)
}

pub fn q_value_from(theta: &KruskalModel, ce: &CondExpectation) -> Result<f64> {
    check_same_shape(theta, ce.theta_bar())?;
    let data_term: f64 = (0..theta.order())
        .map(|p| {
            ce.mode(p)
                .iter()
                .zip(theta.factor(p).iter())
                .map(|(z, a)| if *z == 0.0 { 0.0 } else { z * a.ln() })
                .sum::<f64>()
        })
        .sum();
    Ok(data_term - theta.total_mass())
}

/// Gradient of `Q(·, θ̄)` at `θ`: block `p` is `vec(Z̄_p ⊘ A_p) − (*λ_{[P]\{p}} ⊗ 1)`.
pub fn q_gradient(theta: &KruskalModel, theta_bar: &KruskalModel, x: &DenseTensor) -> Result<Vec<f64>> {
    let ce = cond_expectation(x, theta_bar)?;
    q_gradient_from(theta, &ce)
}

pub fn q_gradient_from(theta: &KruskalModel, ce: &CondExpectation) -> Result<Vec<f64>> {
    check_same_shape(theta, ce.theta_bar())?;
    let mut out = Vec::with_capacity(theta.num_params());
    for p in 0..theta.order() {
        out.extend(q_gradient_block(theta, ce, p).iter());
    }
    Ok(out)
}

pub(crate) fn q_gradient_block(theta: &KruskalModel, ce: &CondExpectation, p: usize) -> Matrix {
    let lambda = theta.lambda_product_except(&[p]);
    let mut g = ce.mode(p).component_div(theta.factor(p));
    for (r, l) in lambda.iter().enumerate() {
        g.column_mut(r).add_scalar_mut(-l);
    }
    g
}

fn check_same_shape(a: &KruskalModel, b: &KruskalModel) -> Result<()> {
    if a.dims() != b.dims() || a.rank() != b.rank() {
        let mut expected = b.dims();
        expected.push(b.rank());
        let mut found = a.dims();
        found.push(a.rank());
        return Err(crate::error::PcpError::ShapeMismatch { expected, found });
    }
    Ok(())
}
