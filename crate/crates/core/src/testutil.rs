use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::kruskal::KruskalModel;
use crate::rank_one::RankOneModel;
use crate::tensor::{DenseTensor, Matrix};

pub fn random_model(dims: &[usize], rank: usize, seed: u64) -> KruskalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = dims
        .iter()
        .map(|&n| Matrix::from_fn(n, rank, |_, _| rng.random_range(0.2..2.2)))
        .collect();
    KruskalModel::new(factors).unwrap()
}

pub fn random_rank_one(dims: &[usize], seed: u64) -> RankOneModel {
    RankOneModel::from_kruskal(&random_model(dims, 1, seed)).unwrap()
}

pub fn random_counts(model: &KruskalModel, seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = model.full_tensor();
    let data = mean.data().iter().map(|&m| Poisson::new(m).unwrap().sample(&mut rng)).collect();
    DenseTensor::new(mean.dims().to_vec(), data).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}
