//! ECM and multi-cycle ECM fitting of PCP models.
//!
//! One outer iteration of [`Schedule::Ecm`] runs a single E-step followed by a
//! conditional maximization for every factor in turn. [`Schedule::Mcecm`]
//! refreshes the E-step before every conditional update and repeats the
//! multiplicative update `inner_iters` times per factor with the Khatri-Rao
//! product frozen, which is the CP-APR ordering. With two modes and one inner
//! iteration it is the Lee-Seung KL update for NMF.

use std::io::Write;
use std::time::Instant;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PcpError, Result};
use crate::kruskal::{KruskalModel, Normalization, DEFAULT_POSITIVITY_FLOOR};
use crate::likelihood::{cond_expectation, loglik_with_mean, CondExpectation};
use crate::tensor::{matricize, DenseTensor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Ecm,
    Mcecm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub schedule: Schedule,
    /// Multiplicative passes per factor and cycle (MCECM only).
    pub inner_iters: usize,
    pub max_outer: usize,
    /// Stop once `|Δℓ| / (1 + |ℓ|)` drops below this.
    pub tol: f64,
    pub seed: u64,
    pub positivity_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::Mcecm,
            inner_iters: 10,
            max_outer: 500,
            tol: 1e-8,
            seed: 0,
            positivity_floor: DEFAULT_POSITIVITY_FLOOR,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(PcpError::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.inner_iters == 0 {
            return Err(PcpError::InvalidArgument("inner_iters must be at least 1".into()));
        }
        if !(self.positivity_floor > 0.0) {
            return Err(PcpError::InvalidArgument("positivity floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loglik: f64,
    /// Largest relative change of any parameter during the iteration.
    pub delta: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
}

impl FitTrace {
    pub fn logliks(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.loglik)
    }

    /// Writes `iteration,loglik,delta,seconds` rows. Row 0 is the initial model.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loglik,delta,seconds")?;
        for r in &self.rows {
            writeln!(w, "{},{:.17e},{:.17e},{:.6}", r.iteration, r.loglik, r.delta, r.seconds)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Final model, normalized so factor 0 carries all column weight.
    pub model: KruskalModel,
    pub trace: FitTrace,
    pub converged: bool,
}

/// Random positive start: entries uniform on (0.1, 1.1), scaled so the
/// model's total mass equals `Σ x`.
pub fn init_model(x: &DenseTensor, rank: usize, seed: u64) -> Result<KruskalModel> {
    if rank == 0 {
        return Err(PcpError::InvalidArgument("rank must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<Matrix> = x
        .dims()
        .iter()
        .map(|&n| Matrix::from_fn(n, rank, |_, _| rng.random_range(0.1..1.1)))
        .collect();
    let model = KruskalModel::new(factors)?;
    let total = x.sum();
    if total <= 0.0 {
        return Ok(model);
    }
    let scale = (total / model.total_mass()).powf(1.0 / model.order() as f64);
    let scales = vec![vec![scale; rank]; model.order()];
    model.rescale_columns(&scales)
}

fn clamp(mut a: Matrix, floor: f64) -> Matrix {
    a.apply(|v| {
        if !(*v >= floor) {
            *v = floor;
        }
    });
    a
}

/// Conditional maximization of `Q(·, θ̄)` over factor `p` with every other
/// factor held at its value in `model`: `A_p = Z̄_p diag(*λ_{[P]\{p}})^{-1}`.
pub fn cm_step(
    x: &DenseTensor,
    model: &KruskalModel,
    p: usize,
    theta_bar: &KruskalModel,
    floor: f64,
) -> Result<Matrix> {
    let ce = cond_expectation(x, theta_bar)?;
    Ok(cm_step_from(&ce, model, p, floor))
}

pub fn cm_step_from(ce: &CondExpectation, model: &KruskalModel, p: usize, floor: f64) -> Matrix {
    let lambda = model.lambda_product_except(&[p]);
    let mut a = ce.mode(p).clone();
    for (r, l) in lambda.iter().enumerate() {
        a.column_mut(r).scale_mut(1.0 / l);
    }
    clamp(a, floor)
}

/// Quantities frozen across the inner passes of one MCECM cycle: `X_(p)`,
/// `⊙A_{[P]\{p}}^{(t−½)}` and `*λ_{[P]\{p}}^{(t−½)}`.
#[derive(Debug, Clone)]
pub struct HalfStep {
    pub mode: usize,
    xp: Matrix,
    kr: Matrix,
    lambda: Vec<f64>,
}

impl HalfStep {
    pub fn new(x: &DenseTensor, model: &KruskalModel, p: usize) -> Result<Self> {
        Ok(Self::with_unfolding(matricize(x, p)?.matrix, model, p))
    }

    fn with_unfolding(xp: Matrix, model: &KruskalModel, p: usize) -> Self {
        Self {
            mode: p,
            xp,
            kr: model.khatri_rao_except(&[p]).expect("order > 1"),
            lambda: model.lambda_product_except(&[p]),
        }
    }
}

/// One multiplicative pass
/// `A_p ← [A_p * ((X_(p) ⊘ (A_p B^T)) B)] diag(*λ)^{-1}`, clamped at `floor`.
pub fn mcecm_update(half: &HalfStep, a_p: &Matrix, floor: f64) -> Matrix {
    let mut ratio = a_p * half.kr.transpose();
    ratio.zip_apply(&half.xp, |m, x| *m = if x == 0.0 { 0.0 } else { x / *m });
    let mut a = a_p.component_mul(&(ratio * &half.kr));
    for (r, l) in half.lambda.iter().enumerate() {
        a.column_mut(r).scale_mut(1.0 / l);
    }
    clamp(a, floor)
}

/// Stepwise driver behind [`fit`]; exposes every iterate.
pub struct EmRunner<'a> {
    x: &'a DenseTensor,
    unfoldings: Vec<Matrix>,
    model: KruskalModel,
    cfg: FitConfig,
    iteration: usize,
    loglik: f64,
}

impl<'a> EmRunner<'a> {
    pub fn new(x: &'a DenseTensor, init: KruskalModel, cfg: FitConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = init.dims();
        if x.dims() != dims.as_slice() {
            return Err(PcpError::ShapeMismatch {
                expected: dims,
                found: x.dims().to_vec(),
            });
        }
        if init.order() < 2 {
            return Err(PcpError::InvalidArgument("fitting needs at least two modes".into()));
        }
        for p in 0..x.order() {
            if let Some(index) = x.marginal(p)?.iter().position(|&v| v == 0.0) {
                warn!("mode-{p} marginal is zero at index {index}; entries will be clamped at the positivity floor");
            }
        }
        let unfoldings = (0..x.order())
            .map(|p| matricize(x, p).map(|m| m.matrix))
            .collect::<Result<Vec<_>>>()?;
        let loglik = loglik_with_mean(x, &init.full_tensor());
        Ok(Self {
            x,
            unfoldings,
            model: init,
            cfg,
            iteration: 0,
            loglik,
        })
    }

    pub fn model(&self) -> &KruskalModel {
        &self.model
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Runs one outer iteration and returns its trace row.
    pub fn step(&mut self) -> TraceRow {
        let start = Instant::now();
        let before = self.model.pack();
        let floor = self.cfg.positivity_floor;
        match self.cfg.schedule {
            Schedule::Ecm => {
                let ce = self.e_step();
                for p in 0..self.model.order() {
                    let a = cm_step_from(&ce, &self.model, p, floor);
                    self.model.set_factor(p, a);
                }
            }
            Schedule::Mcecm => {
                for p in 0..self.model.order() {
                    let half = HalfStep::with_unfolding(self.unfoldings[p].clone(), &self.model, p);
                    let mut a = self.model.factor(p).clone();
                    for _ in 0..self.cfg.inner_iters {
                        a = mcecm_update(&half, &a, floor);
                    }
                    self.model.set_factor(p, a);
                }
            }
        }
        self.iteration += 1;
        self.loglik = loglik_with_mean(self.x, &self.model.full_tensor());
        let delta = before
            .iter()
            .zip(self.model.pack())
            .map(|(a, b)| (b - a).abs() / a.abs())
            .fold(0.0, f64::max);
        TraceRow {
            iteration: self.iteration,
            loglik: self.loglik,
            delta,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn e_step(&self) -> CondExpectation {
        cond_expectation(self.x, &self.model).expect("dims checked in new")
    }

    pub fn into_model(self) -> KruskalModel {
        self.model
    }
}

/// Runs the configured schedule from `init` until the relative loglikelihood
/// change falls below `cfg.tol` or `cfg.max_outer` iterations have run.
pub fn fit(x: &DenseTensor, init: KruskalModel, cfg: &FitConfig) -> Result<FitResult> {
    let mut runner = EmRunner::new(x, init, cfg.clone())?;
    let mut trace = FitTrace {
        rows: vec![TraceRow {
            iteration: 0,
            loglik: runner.loglik(),
            delta: 0.0,
            seconds: 0.0,
        }],
    };
    if !runner.loglik().is_finite() {
        return Err(PcpError::NonFinite { iteration: 0, trace });
    }
    let mut converged = false;
    while runner.iteration() < cfg.max_outer {
        let prev = runner.loglik();
        let row = runner.step();
        let ll = row.loglik;
        let iteration = row.iteration;
        trace.rows.push(row);
        if !ll.is_finite() {
            return Err(PcpError::NonFinite { iteration, trace });
        }
        if (ll - prev).abs() / (1.0 + ll.abs()) < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        model: runner.into_model().normalize(Normalization::AbsorbInto(0)),
        trace,
        converged,
    })
}
