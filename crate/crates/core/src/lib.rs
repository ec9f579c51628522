//! Poisson canonical polyadic (PCP) tensor models.
//!
//! Dense tensor kernels, Kruskal models, the Poisson likelihood and its EM
//! surrogate, ECM/MCECM fitting, closed-form rank-one inference, Fisher
//! information assembly with numerical rank diagnostics, and a Monte Carlo
//! experiment harness.

pub mod em;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod io;
pub mod kruskal;
pub mod likelihood;
pub mod rank_one;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use em::{fit, FitConfig, FitResult, FitTrace, Schedule};
pub use error::{PcpError, Result};
pub use harness::{generate_model, mc_fim, sample_poisson, GenSpec, McFimEstimate};
pub use fisher::{fim, numerical_rank, FisherKind, FisherMatrix, RankVerdict};
pub use kruskal::{KruskalModel, Normalization};
pub use rank_one::{mle_rank1, RankOneModel};
pub use tensor::{DenseTensor, Matrix};
