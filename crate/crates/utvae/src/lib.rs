//! Causal treatment-effect estimation with latent-confounder VAEs.
//!
//! The model family is CEVAE plus its uniform-treatment variants: the
//! generative side learns p(x|z), p(t|z), p(y|t,z) around a latent
//! confounder, the inference side learns q(z|x,t,y), and auxiliary
//! heads q(t|x), q(y|x,t) drive the counterfactual query. The
//! uniform-treatment objectives reweight the per-sample bound by
//! w = 1/(2 p(t|x)), with the propensity estimated by epsilon-ball
//! counts, so that training behaves as if treatment had been assigned
//! uniformly.
//!
//! Module map:
//! - [`diffcore`]: reverse-mode autodiff tape over dense f64 tensors,
//!   with the Adam optimizer.
//! - [`dists`]: log-densities, KL terms, and reparameterized sampling
//!   for the Bernoulli/Gaussian heads.
//! - [`networks`]: the model architecture, parameter store, checkpoint
//!   format, and the counterfactual query.
//! - [`propensity`]: ball-tree radius queries, epsilon-ball propensity
//!   estimates, and the importance weights built from them.
//! - [`training`]: the four objectives, gradient routing between the
//!   generative/inference/auxiliary parameter groups, and the training
//!   loop.
//! - [`datagen`]: the synthetic confounded generator with exact
//!   oracles, IHDP replicate loading, splits, and normalization.
//! - [`eval`]: ATE/PEHE metrics against oracles and the
//!   inverse-probability-weighting baselines.

pub mod datagen;
pub mod diffcore;
pub mod dists;
pub mod eval;
pub mod networks;
pub mod propensity;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;
