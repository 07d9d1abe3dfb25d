//! State-space point process (S2P2) toolkit.
//!
//! A marked temporal point process model built from stacked latent linear
//! Hawkes layers: complex diagonal jump-linear dynamics advanced in closed
//! form between events (zero-order hold), evaluated with a parallel prefix
//! scan, and trained by maximum likelihood with a Monte-Carlo estimate of
//! the compensator integral. The crate also ships the classical simulators
//! (exponential-kernel Hawkes, self-correcting, square-wave Poisson, a
//! long-range trigger/target process) together with closed-form likelihood
//! oracles, so trained models can be scored against ground truth.
//!
//! Module map:
//! - [`events`]: event-sequence data model and JSON-Lines I/O.
//! - [`rng`]: counter-based deterministic random streams.
//! - [`simulate`]: ground-truth generators and likelihood oracles.
//! - [`quad`]: quadrature and special-function helpers.
//! - [`autodiff`]: reverse-mode tape over real and complex tensors.
//! - [`scan`]: the linear-recurrence kernel (sequential and chunked parallel).
//! - [`llh`]: a single latent linear Hawkes layer.
//! - [`model`]: the full stack, conditioning, intensities, log-likelihood.
//! - [`train`]: Adam, warmup/cosine schedule, batching, early stopping.
//! - [`eval`]: likelihood decomposition, RMSE, accuracy, PCE/ECE.

pub mod autodiff;
pub mod events;
pub mod eval;
pub mod llh;
pub mod model;
pub mod quad;
pub mod rng;
pub mod scan;
pub mod simulate;
pub mod train;
