//! Supervised manifold embeddings built from local surrogate models.
//!
//! Every data item gets a point in a low-dimensional embedding and its own
//! affine (or logistic) local model. Both are found jointly by minimising a
//! softmax-weighted sum of local-model losses, so that items whose targets are
//! explained by similar local models end up close to each other.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`data`]: CSV ingestion, normalisation, resampling, target permutation.
//! * [`local_model`]: the two local-model families, losses and derivatives.
//! * [`lbfgs`]: limited-memory BFGS with Armijo backtracking.
//! * [`engine`]: the joint objective, radius projection, escape heuristic, `fit`.
//! * [`baseline`]: PCA and external embeddings with local models on a frozen layout.
//! * [`evaluation`]: permutation loss, stability metrics, explanation quality.
//! * [`cluster`]: k-means over local-model coefficients and binned summaries.
//! * [`synth`]: piecewise-linear synthetic data generator.

pub mod baseline;
pub mod cluster;
pub mod data;
pub mod engine;
mod error;
pub mod evaluation;
pub mod lbfgs;
pub mod local_model;
pub mod synth;

pub use baseline::{FixedEmbedding, Pca};
pub use cluster::{BinnedGrid, ClusterSummary, KMeans};
pub use data::{Dataset, Normalisation};
pub use engine::{DistanceKind, Hyperparameters, OptimiserSettings, Solution};
pub use error::{Error, Result};
pub use evaluation::{ExplanationQuality, MetricReport};
pub use local_model::ModelFamily;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used everywhere a seed is accepted.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child seed, e.g. for repetitions or restarts.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
