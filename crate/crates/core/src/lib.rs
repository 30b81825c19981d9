//! Trainable MCMC kernels built on volume-preserving flows, plus the machinery
//! to benchmark them against Hamiltonian Monte Carlo.
//!
//! The crate provides:
//!
//! - [`tensor`]: a small dense-tensor library with a reverse-mode tape and an
//!   Adam optimizer, enough to train the coupling networks and discriminators
//!   used here.
//! - [`targets`]: energy functions `U(x)` with gradients — four analytic 2D
//!   densities (`ring`, `mog2`, `mog6`, `ring5`) and Bayesian logistic
//!   regression posteriors built from CSV datasets.
//! - [`nice`]: additive coupling layers over the joint `(x, v)` space, stacked
//!   into an exactly invertible, volume-preserving map.
//! - [`samplers`]: HMC with leapfrog integration, the coin-flip flow proposal
//!   with Metropolis-Hastings correction, and a deterministic batched chain
//!   runner.
//! - [`training`]: the adversarial training loop (pairwise Wasserstein
//!   discriminator, bootstrap sample buffer, auxiliary-variable prior penalty)
//!   that fits the flow to a target.
//! - [`diagnostics`]: effective sample size with reference moments,
//!   Gelman-Rubin R-hat, error-vs-length curves and density rasters.
//!
//! Chains are reproducible: every run is driven by per-chain counter-based RNG
//! streams derived from a single master seed.

pub mod diagnostics;
pub mod error;
pub mod nice;
pub mod samplers;
pub mod targets;
pub mod tensor;
pub mod training;
pub mod util;

pub use error::{Error, Result};
pub use tensor::Tensor;
