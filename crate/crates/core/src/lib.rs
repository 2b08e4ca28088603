//! Entropic multi-marginal optimal transport over dense `n^k` tensors and the
//! multi-marginal matching gap (M3G) loss for k-view embedding batches.
//!
//! * [`tensor`]: storage plus marginal, tensor-sum, log-sum-exp and inner
//!   product reductions.
//! * [`solver`]: multi-marginal Sinkhorn in the log domain.
//! * [`costs`]: circular variance / circular standard deviation costs and the
//!   batch-to-cost-tensor operator.
//! * [`m3g`]: the loss and its forward-only gradient.
//! * [`baselines`]: InfoNCE and BYOL with multiview aggregations.
//! * [`experiments`]: gradient-flow toy, synthetic trainer, solver bench.
//!
//! Loops over independent output slots run on rayon when the `parallel`
//! feature is on (default). Every slot is reduced sequentially with pairwise
//! summation, so results are identical for any thread count.

pub mod baselines;
pub mod costs;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod io;
pub mod m3g;
pub mod par;
pub mod solver;
pub mod sum;
pub mod tensor;

pub use costs::{cost_tensor, MultiwayCost, PairScale};
pub use embedding::{EmbeddingBatch, GradientBatch};
pub use error::{Error, Result};
pub use m3g::{m3g, m3g_gradient, M3gResult};
pub use solver::{mm_sinkhorn, SolveReport, SolverConfig};
pub use tensor::{tensor_sum, DenseTensor, PotentialMatrix, TensorShape};
