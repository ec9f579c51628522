//! Synthetic models, Poisson sampling, Monte Carlo Fisher estimates and the
//! two simulation studies (score-covariance validation and rank sweeps).

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PcpError, Result};
use crate::fisher::{fim_capped, numerical_rank, DEFAULT_ORDER_CAP};
use crate::kruskal::KruskalModel;
use crate::likelihood::score;
use crate::tensor::{DenseTensor, Matrix};

/// Parameters of a synthetic model with `P` modes of equal size `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub order: usize,
    pub rank: usize,
    /// Target mean entry of the model tensor.
    pub mean: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.order == 0 || self.rank == 0 {
            return Err(PcpError::InvalidArgument("N, P and R must be positive".into()));
        }
        if !(self.mean > 0.0 && self.mean.is_finite()) {
            return Err(PcpError::InvalidArgument(format!("mean entry must be positive, got {}", self.mean)));
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.n; self.order]
    }
}

/// SplitMix64 finalizer over `seed + stream`, used to give every replicate
/// and grid cell an independent generator.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw from `{v : Σv = 1, v_i ≥ floor}` by shifting a flat
/// Dirichlet sample on the shrunk simplex.
fn floored_simplex(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    let scale = 1.0 - n as f64 * floor;
    e.iter().map(|v| floor + scale * v / total).collect()
}

/// Factor matrices whose columns lie on the unit simplex with minimum entry
/// `1/(100N)`, before any reweighting.
pub fn simplex_factors(spec: &GenSpec) -> Result<Vec<Matrix>> {
    spec.validate()?;
    let floor = 1.0 / (100.0 * spec.n as f64);
    assert!(floor * spec.n as f64 <= 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.order)
        .map(|_| {
            let mut a = Matrix::zeros(spec.n, spec.rank);
            for r in 0..spec.rank {
                let v = floored_simplex(&mut rng, spec.n, floor);
                a.set_column(r, &DVector::from_vec(v));
            }
            a
        })
        .collect())
}

/// Component weights `λ = (S N^P / Σr) [1 … R]`.
pub fn component_lambda(spec: &GenSpec) -> Vec<f64> {
    let cells = (spec.n as f64).powi(spec.order as i32);
    let denom = (spec.rank * (spec.rank + 1) / 2) as f64;
    (1..=spec.rank).map(|r| spec.mean * cells / denom * r as f64).collect()
}

/// Simplex factors reweighted by `diag(λ^{1/P})` so the model tensor has
/// mean entry `S` and component `r` carries mass proportional to `r`.
pub fn generate_model(spec: &GenSpec) -> Result<KruskalModel> {
    let mut factors = simplex_factors(spec)?;
    let lambda = component_lambda(spec);
    let root = 1.0 / spec.order as f64;
    for a in &mut factors {
        for (r, l) in lambda.iter().enumerate() {
            a.column_mut(r).scale_mut(l.powf(root));
        }
    }
    KruskalModel::new(factors)
}

/// Independent Poisson draws, one per cell in natural order from a single
/// seeded stream. Cells with zero mean give zero.
pub fn sample_poisson(mean: &DenseTensor, seed: u64) -> Result<DenseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(mean.len());
    for (index, &m) in mean.data().iter().enumerate() {
        if m == 0.0 {
            data.push(0.0);
            continue;
        }
        let dist = Poisson::new(m).map_err(|_| PcpError::NonPositive {
            what: "Poisson mean",
            index,
            value: m,
        })?;
        data.push(dist.sample(&mut rng));
    }
    DenseTensor::new(mean.dims().to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct McFimEstimate {
    pub k: usize,
    /// `μ_K`, the mean score.
    pub mean_score: Vec<f64>,
    /// Per-coordinate sample standard deviation of the scores.
    pub score_sd: Vec<f64>,
    /// `Î_K`, the centered score second moment.
    pub estimate: DMatrix<f64>,
    /// `‖I − Î_K‖_F / ‖I‖_F`.
    pub rel_error: f64,
}

/// Monte Carlo estimate of the expected Fisher matrix from `K` score draws.
pub fn mc_fim(model: &KruskalModel, k: usize, seed: u64) -> Result<McFimEstimate> {
    let analytic = fim_capped(model, None, DEFAULT_ORDER_CAP)?;
    mc_fim_against(model, analytic.matrix(), k, seed)
}

/// As [`mc_fim`], comparing against a precomputed analytic matrix.
pub fn mc_fim_against(model: &KruskalModel, analytic: &DMatrix<f64>, k: usize, seed: u64) -> Result<McFimEstimate> {
    if k < 2 {
        return Err(PcpError::InvalidArgument(format!("need at least 2 samples, got {k}")));
    }
    let mean = model.full_tensor();
    let n = model.num_params();
    let mut scores = DMatrix::zeros(n, k);
    for i in 0..k {
        let x = sample_poisson(&mean, derive_seed(seed, i as u64))?;
        scores.set_column(i, &DVector::from_vec(score(&x, model)?));
    }
    let mu = scores.column_mean();
    for mut c in scores.column_iter_mut() {
        c -= &mu;
    }
    let estimate = (&scores * scores.transpose()) / k as f64;
    let score_sd = (0..n)
        .map(|i| (scores.row(i).norm_squared() / (k - 1) as f64).sqrt())
        .collect();
    let rel_error = (analytic - &estimate).norm() / analytic.norm();
    Ok(McFimEstimate {
        k,
        mean_score: mu.iter().copied().collect(),
        score_sd,
        estimate,
        rel_error,
    })
}

/// One long-format result row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: &'static str,
    pub n: usize,
    pub s: f64,
    pub r: usize,
    pub p: usize,
    pub k: Option<usize>,
    pub rep: usize,
    pub metric: &'static str,
    pub value: f64,
    pub seconds: f64,
}

pub const CSV_HEADER: &str = "experiment,N,S,R,P,K,rep,metric,value,seconds";

pub fn write_csv<W: Write>(rows: &[Row], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        let k = row.k.map(|k| k.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{:.6}",
            row.experiment, row.n, row.s, row.r, row.p, k, row.rep, row.metric, row.value, row.seconds
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McGrid {
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub means: Vec<f64>,
    pub ranks: Vec<usize>,
    pub orders: Vec<usize>,
}

impl Default for McGrid {
    fn default() -> Self {
        Self {
            ks: vec![4, 16, 64, 256, 1024],
            ns: vec![10],
            means: vec![1.0],
            ranks: vec![1, 2],
            orders: vec![3],
        }
    }
}

impl McGrid {
    fn cells(&self) -> Vec<(usize, f64, usize, usize)> {
        let mut out = Vec::new();
        for &p in &self.orders {
            for &n in &self.ns {
                for &s in &self.means {
                    for &r in &self.ranks {
                        out.push((n, s, r, p));
                    }
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty() || self.cells().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGrid {
    pub ns: Vec<usize>,
    pub orders: Vec<usize>,
    pub ranks: Vec<usize>,
    pub mean: f64,
}

impl Default for RankGrid {
    fn default() -> Self {
        Self {
            ns: vec![10, 25],
            orders: vec![2, 3],
            ranks: vec![1, 2, 3, 4],
            mean: 4.0,
        }
    }
}

impl RankGrid {
    /// Past the point `R(PN − P + 1) ≥ N^P` for `P=3, N=8`.
    pub fn underdetermined() -> Self {
        Self {
            ns: vec![8],
            orders: vec![3],
            ranks: (20..=28).collect(),
            mean: 4.0,
        }
    }

    fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &p in &self.orders {
            for &n in &self.ns {
                for &r in &self.ranks {
                    out.push((n, r, p));
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.cells().is_empty()
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(PcpError::InvalidArgument("repetition count must be positive".into()));
    }
    Ok(())
}

/// Score-covariance validation: for every cell and repetition a fresh model
/// is drawn, then `Î_K` is formed for each `K` from independent samples.
/// Emits one `rel_error` row per `(cell, K, rep)`.
pub fn run_mc_experiment(grid: &McGrid, reps: usize, seed: u64) -> Result<Vec<Row>> {
    check_reps(reps)?;
    if grid.is_empty() {
        return Err(PcpError::InvalidArgument("empty experiment grid".into()));
    }
    let cells = grid.cells();
    for &(n, _, r, p) in &cells {
        let order = r * n * p;
        if order > DEFAULT_ORDER_CAP {
            return Err(PcpError::OrderCap {
                order,
                cap: DEFAULT_ORDER_CAP,
                bytes: crate::fisher::dense_bytes(order),
            });
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..reps).map(move |rep| (c, rep))).collect();
    let nested: Vec<Vec<Row>> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let (n, s, r, p) = cells[c];
            let job_seed = derive_seed(seed, (c * reps + rep) as u64);
            let spec = GenSpec {
                n,
                order: p,
                rank: r,
                mean: s,
                seed: derive_seed(job_seed, 0),
            };
            let model = generate_model(&spec)?;
            let analytic = fim_capped(&model, None, DEFAULT_ORDER_CAP)?;
            grid.ks
                .iter()
                .enumerate()
                .map(|(ki, &k)| {
                    let start = Instant::now();
                    let est = mc_fim_against(&model, analytic.matrix(), k, derive_seed(job_seed, 1 + ki as u64))?;
                    Ok(Row {
                        experiment: "mc_fim",
                        n,
                        s,
                        r,
                        p,
                        k: Some(k),
                        rep,
                        metric: "rel_error",
                        value: est.rel_error,
                        seconds: start.elapsed().as_secs_f64(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Rank sweep: for every cell and repetition a fresh model is drawn and the
/// numerical rank of its expected Fisher matrix compared with the conjectured
/// rank. Emits `numerical_rank`, `conjectured_rank` and `ratio` rows.
pub fn run_rank_experiment(grid: &RankGrid, reps: usize, seed: u64, experiment: &'static str) -> Result<Vec<Row>> {
    check_reps(reps)?;
    if grid.is_empty() {
        return Err(PcpError::InvalidArgument("empty experiment grid".into()));
    }
    let cells = grid.cells();
    for &(n, r, p) in &cells {
        let order = r * n * p;
        if order > DEFAULT_ORDER_CAP {
            return Err(PcpError::OrderCap {
                order,
                cap: DEFAULT_ORDER_CAP,
                bytes: crate::fisher::dense_bytes(order),
            });
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..reps).map(move |rep| (c, rep))).collect();
    let nested: Vec<Vec<Row>> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let (n, r, p) = cells[c];
            let start = Instant::now();
            let spec = GenSpec {
                n,
                order: p,
                rank: r,
                mean: grid.mean,
                seed: derive_seed(seed, (c * reps + rep) as u64),
            };
            let model = generate_model(&spec)?;
            let verdict = numerical_rank(&fim_capped(&model, None, DEFAULT_ORDER_CAP)?)?;
            let seconds = start.elapsed().as_secs_f64();
            let row = |metric, value| Row {
                experiment,
                n,
                s: grid.mean,
                r,
                p,
                k: None,
                rep,
                metric,
                value,
                seconds,
            };
            Ok(vec![
                row("numerical_rank", verdict.numerical_rank as f64),
                row("conjectured_rank", verdict.conjectured_rank as f64),
                row("ratio", verdict.numerical_rank as f64 / verdict.conjectured_rank as f64),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
