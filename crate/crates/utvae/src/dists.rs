//! Distribution heads over tape nodes: diagonal Gaussians and Bernoullis
//! with differentiable log-probabilities, the closed-form KL to the
//! standard normal prior, and reparameterized sampling.
//!
//! Rows index samples, columns index dimensions; every log-probability
//! reduces across columns to an n x 1 per-sample vector so objectives can
//! weight samples individually before reducing further.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{NodeId, Tape, Tensor};

/// Half of ln(2*pi), the per-dimension Gaussian normalization constant.
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Additive floor on standard deviations produced by [`softplus_std`],
/// preventing KL and log-density blowups from collapsed variances.
pub const STD_FLOOR: f64 = 1e-6;

/// Diagonal Gaussian with per-sample, per-dimension mean and std nodes.
#[derive(Clone, Copy, Debug)]
pub struct GaussianDiag {
    mean: NodeId,
    std: NodeId,
}

impl GaussianDiag {
    /// Wrap mean/std nodes of equal shape. The std values recorded on the
    /// tape must be strictly positive; parameterize through
    /// [`softplus_std`] to guarantee that.
    pub fn new(tape: &Tape, mean: NodeId, std: NodeId) -> Self {
        assert_eq!(
            tape.value(mean).shape(),
            tape.value(std).shape(),
            "gaussian mean and std shapes differ"
        );
        assert!(
            tape.value(std).data().iter().all(|&s| s > 0.0),
            "non-positive standard deviation"
        );
        GaussianDiag { mean, std }
    }

    pub fn mean(&self) -> NodeId {
        self.mean
    }

    pub fn std(&self) -> NodeId {
        self.std
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.value(self.mean).cols()
    }
}

/// Bernoulli head carrying logits; probabilities are derived, never stored,
/// so log-probabilities can use the saturation-free logit form.
#[derive(Clone, Copy, Debug)]
pub struct BernoulliP {
    logit: NodeId,
}

impl BernoulliP {
    pub fn new(logit: NodeId) -> Self {
        BernoulliP { logit }
    }

    pub fn logit(&self) -> NodeId {
        self.logit
    }

    /// sigmoid(logit), recorded on the tape.
    pub fn prob(&self, tape: &mut Tape) -> NodeId {
        tape.sigmoid(self.logit)
    }
}

/// The fixed N(0, I) prior over the latent confounder.
#[derive(Clone, Copy, Debug)]
pub struct StdNormalPrior {
    pub dim: usize,
}

impl StdNormalPrior {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "latent dimension must be at least 1");
        StdNormalPrior { dim }
    }

    /// n independent draws, one row each.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Tensor {
        standard_normal(rng, n, self.dim)
    }
}

/// An n x d matrix of independent standard-normal draws.
pub fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Map a raw pre-activation to a strictly positive std:
/// softplus(raw) + [`STD_FLOOR`].
pub fn softplus_std(tape: &mut Tape, raw: NodeId) -> NodeId {
    let sp = tape.softplus(raw);
    tape.offset(sp, STD_FLOOR)
}

/// Per-sample Gaussian log-density, summed over dimensions:
/// sum_d [ -1/2 ln(2 pi) - ln sigma_d - (x_d - mu_d)^2 / (2 sigma_d^2) ].
pub fn gaussian_log_prob(tape: &mut Tape, g: &GaussianDiag, x: NodeId) -> NodeId {
    assert_eq!(
        tape.value(x).shape(),
        tape.value(g.mean).shape(),
        "gaussian log_prob: x shape differs from the distribution's"
    );
    let diff = tape.sub(x, g.mean);
    let sq = tape.square(diff);
    let var = tape.square(g.std);
    let two_var = tape.scale(var, 2.0);
    let quad = tape.div(sq, two_var);
    let ln_std = tape.ln(g.std);
    let pos = tape.add(ln_std, quad);
    let neg = tape.neg(pos);
    let per_dim = tape.offset(neg, -HALF_LN_TWO_PI);
    tape.row_sum(per_dim)
}

/// Per-sample Bernoulli log-likelihood in stable logit form, summed over
/// dimensions: sum_d [ y_d * logit_d - softplus(logit_d) ]. `y` must be
/// exactly 0 or 1 everywhere.
pub fn bernoulli_log_prob(tape: &mut Tape, b: &BernoulliP, y: NodeId) -> NodeId {
    assert_eq!(
        tape.value(y).shape(),
        tape.value(b.logit).shape(),
        "bernoulli log_prob: y shape differs from the logits'"
    );
    assert!(
        tape.value(y).data().iter().all(|&v| v == 0.0 || v == 1.0),
        "bernoulli log_prob: y outside {{0,1}}"
    );
    let yl = tape.mul(y, b.logit);
    let sp = tape.softplus(b.logit);
    let per_dim = tape.sub(yl, sp);
    tape.row_sum(per_dim)
}

/// Per-sample KL(g || N(0, I)) in closed form, summed over dimensions:
/// sum_d 1/2 (mu_d^2 + sigma_d^2 - 1 - 2 ln sigma_d). Non-negative, zero
/// exactly when mu = 0 and sigma = 1.
pub fn kl_to_std_normal(tape: &mut Tape, g: &GaussianDiag) -> NodeId {
    let mu_sq = tape.square(g.mean);
    let var = tape.square(g.std);
    let ln_std = tape.ln(g.std);
    let two_ln = tape.scale(ln_std, 2.0);
    let sum = tape.add(mu_sq, var);
    let diff = tape.sub(sum, two_ln);
    let shifted = tape.offset(diff, -1.0);
    let per_dim = tape.scale(shifted, 0.5);
    tape.row_sum(per_dim)
}

/// z = mu + sigma * noise, with gradients flowing to mu and sigma but not
/// to the externally drawn noise.
pub fn reparam_sample(tape: &mut Tape, g: &GaussianDiag, noise: NodeId) -> NodeId {
    assert_eq!(
        tape.value(noise).shape(),
        tape.value(g.mean).shape(),
        "reparam_sample: noise shape differs from the distribution's"
    );
    let scaled = tape.mul(g.std, noise);
    tape.add(g.mean, scaled)
}
