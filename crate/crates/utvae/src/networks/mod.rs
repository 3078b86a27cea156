//! The CEVAE model: generative networks p(x|z), p(t|z), p(y|t,z), the
//! inference network q(z|x,t,y), the auxiliary predictors q(t|x) and
//! q(y|x,t), and the counterfactual query that turns a trained model into
//! per-row potential-outcome estimates.
//!
//! Every treatment-conditioned network has exactly two arms: a shared
//! trunk feeds a separate head per treatment value, and the observed t
//! selects which head's output counts. Selection multiplies by the 0/1
//! indicator, so the counterfactual arm receives exactly zero gradient
//! on every sample, which the tests pin down bit-for-bit.

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datagen::{Dataset, YType};
use crate::diffcore::{NodeId, ParamGroup, ParamId, ParamStore, Tape, Tensor};
use crate::dists::{self, BernoulliP, GaussianDiag};

pub const DEFAULT_HIDDEN_LAYERS: usize = 3;
pub const DEFAULT_HIDDEN_UNITS: usize = 200;
pub const SYNTHETIC_Z_DIM: usize = 5;
pub const IHDP_Z_DIM: usize = 20;

// ---- architecture ----

#[derive(Clone, Debug)]
pub struct ArchConfig {
    pub x_dim: usize,
    /// Per-coordinate observation head: true = Bernoulli, false = Gaussian.
    pub x_binary_mask: Vec<bool>,
    pub z_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub y_is_binary: bool,
}

impl ArchConfig {
    /// Architecture matching a dataset's covariate layout and outcome type.
    pub fn for_dataset(ds: &Dataset, z_dim: usize, hidden_layers: usize, hidden_units: usize) -> Self {
        ArchConfig {
            x_dim: ds.d(),
            x_binary_mask: ds.x_binary_mask.clone(),
            z_dim,
            hidden_layers,
            hidden_units,
            y_is_binary: ds.y_type == YType::Binary,
        }
    }

    fn assert_valid(&self) {
        assert!(self.x_dim >= 1, "at least one covariate required");
        assert_eq!(self.x_binary_mask.len(), self.x_dim, "binary mask length must equal x_dim");
        assert!(self.z_dim >= 1, "latent dimension must be at least 1");
        assert!(self.hidden_layers >= 1, "at least one hidden layer required");
        assert!(self.hidden_units >= 1, "at least one hidden unit required");
    }

    fn binary_columns(&self) -> Vec<usize> {
        (0..self.x_dim).filter(|&j| self.x_binary_mask[j]).collect()
    }

    fn continuous_columns(&self) -> Vec<usize> {
        (0..self.x_dim).filter(|&j| !self.x_binary_mask[j]).collect()
    }

    fn y_out_dim(&self) -> usize {
        if self.y_is_binary {
            1
        } else {
            2 // mean and raw std
        }
    }
}

// ---- network building blocks ----

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

/// Plain MLP: `hidden_layers` ELU layers then a linear output.
#[derive(Clone, Debug)]
struct Mlp {
    hidden: Vec<Linear>,
    out: Linear,
}

#[derive(Clone, Debug)]
struct ArmHead {
    hidden: Linear,
    out: Linear,
}

/// Treatment-conditioned net: a shared trunk of `hidden_layers - 1` ELU
/// layers, then one hidden layer plus linear output per arm.
#[derive(Clone, Debug)]
struct TwoArm {
    trunk: Vec<Linear>,
    arms: [ArmHead; 2],
}

/// p(x|z): shared ELU stack, then a logit head over the binary block and
/// mean/raw-std heads over the continuous block.
#[derive(Clone, Debug)]
struct XDecoder {
    hidden: Vec<Linear>,
    bin: Option<Linear>,
    mean: Option<Linear>,
    raw_std: Option<Linear>,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: Option<ChaCha8Rng>,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, group: ParamGroup, in_dim: usize, out_dim: usize) -> Linear {
        let w = match &mut self.rng {
            // scale by 1/sqrt(fan-in) so activations stay O(1) at any width
            Some(rng) => {
                let scale = 1.0 / (in_dim as f64).sqrt();
                Tensor::from_fn(in_dim, out_dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
            }
            None => Tensor::zeros(in_dim, out_dim),
        };
        Linear {
            w: self.store.add(format!("{name}.w"), group, w),
            b: self.store.add(format!("{name}.b"), group, Tensor::zeros(1, out_dim)),
        }
    }

    fn stack(&mut self, prefix: &str, group: ParamGroup, in_dim: usize, units: usize, depth: usize) -> Vec<Linear> {
        (0..depth)
            .map(|i| self.linear(&format!("{prefix}.l{i}"), group, if i == 0 { in_dim } else { units }, units))
            .collect()
    }

    fn mlp(&mut self, prefix: &str, group: ParamGroup, in_dim: usize, arch: &ArchConfig, out_dim: usize) -> Mlp {
        let hidden = self.stack(prefix, group, in_dim, arch.hidden_units, arch.hidden_layers);
        let out = self.linear(&format!("{prefix}.out"), group, arch.hidden_units, out_dim);
        Mlp { hidden, out }
    }

    fn two_arm(&mut self, prefix: &str, group: ParamGroup, in_dim: usize, arch: &ArchConfig, out_dim: usize) -> TwoArm {
        let units = arch.hidden_units;
        let trunk = self.stack(prefix, group, in_dim, units, arch.hidden_layers - 1);
        let trunk_out = if arch.hidden_layers == 1 { in_dim } else { units };
        let arm = |b: &mut Self, a: usize| ArmHead {
            hidden: b.linear(&format!("{prefix}.arm{a}.h"), group, trunk_out, units),
            out: b.linear(&format!("{prefix}.arm{a}.out"), group, units, out_dim),
        };
        let arms = [arm(self, 0), arm(self, 1)];
        TwoArm { trunk, arms }
    }
}

// ---- forward helpers ----

fn linear_fwd(tape: &mut Tape, store: &ParamStore, l: Linear, input: NodeId) -> NodeId {
    let w = tape.param(store, l.w);
    let b = tape.param(store, l.b);
    let prod = tape.matmul(input, w);
    let rows = tape.value(prod).rows();
    let bb = tape.broadcast_row(b, rows);
    tape.add(prod, bb)
}

fn hidden_stack(tape: &mut Tape, store: &ParamStore, layers: &[Linear], mut h: NodeId) -> NodeId {
    for &l in layers {
        let a = linear_fwd(tape, store, l, h);
        h = tape.elu(a);
    }
    h
}

fn mlp_fwd(tape: &mut Tape, store: &ParamStore, net: &Mlp, input: NodeId) -> NodeId {
    let h = hidden_stack(tape, store, &net.hidden, input);
    linear_fwd(tape, store, net.out, h)
}

fn arm_fwd(tape: &mut Tape, store: &ParamStore, arm: &ArmHead, h: NodeId) -> NodeId {
    let a = linear_fwd(tape, store, arm.hidden, h);
    let hh = tape.elu(a);
    linear_fwd(tape, store, arm.out, hh)
}

/// Run both arms on the shared trunk output and keep, per row, the arm the
/// observed treatment selects: t * arm1 + (1 - t) * arm0. The indicators
/// are constants, so the unselected arm's gradient is exactly zero.
fn two_arm_fwd(tape: &mut Tape, store: &ParamStore, net: &TwoArm, input: NodeId, t: &Tensor) -> NodeId {
    assert_eq!(t.cols(), 1, "treatment must be a column");
    assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0), "treatment outside {{0,1}}");
    let h = hidden_stack(tape, store, &net.trunk, input);
    let a0 = arm_fwd(tape, store, &net.arms[0], h);
    let a1 = arm_fwd(tape, store, &net.arms[1], h);
    let cols = tape.value(a0).cols();
    let sel1 = Tensor::from_fn(t.rows(), cols, |i, _| t.get(i, 0));
    let sel0 = sel1.map(|v| 1.0 - v);
    let c1 = tape.constant(sel1);
    let c0 = tape.constant(sel0);
    let p1 = tape.mul(c1, a1);
    let p0 = tape.mul(c0, a0);
    tape.add(p1, p0)
}

fn select_columns(m: &Tensor, idx: &[usize]) -> Tensor {
    Tensor::from_fn(m.rows(), idx.len(), |i, j| m.get(i, idx[j]))
}

// ---- outcome heads ----

/// Outcome distribution produced by the generative y network or the
/// auxiliary y predictor: Bernoulli for binary outcomes, diagonal
/// Gaussian for continuous ones.
pub enum OutcomeHead {
    Binary(BernoulliP),
    Continuous(GaussianDiag),
}

impl OutcomeHead {
    /// log p(y) per row.
    pub fn log_prob(&self, tape: &mut Tape, y: NodeId) -> NodeId {
        match self {
            OutcomeHead::Binary(b) => dists::bernoulli_log_prob(tape, b, y),
            OutcomeHead::Continuous(g) => dists::gaussian_log_prob(tape, g, y),
        }
    }

    /// E[y] per row: sigmoid of the logit, or the Gaussian mean.
    pub fn mean(&self, tape: &mut Tape) -> NodeId {
        match self {
            OutcomeHead::Binary(b) => {
                let logit = b.logit();
                tape.sigmoid(logit)
            }
            OutcomeHead::Continuous(g) => g.mean(),
        }
    }
}

// ---- the model ----

pub struct CevaeModel {
    arch: ArchConfig,
    store: ParamStore,
    x_dec: XDecoder,
    t_dec: Mlp,
    y_dec: TwoArm,
    z_enc: TwoArm,
    t_aux: Mlp,
    y_aux: TwoArm,
}

impl CevaeModel {
    /// Fresh model with fan-in-scaled Gaussian weights and zero biases.
    pub fn new(arch: ArchConfig, seed: u64) -> Self {
        Self::build(arch, Some(ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Model with every parameter zero; forward passes are then exactly
    /// computable by hand, which the tests lean on.
    pub fn zeroed(arch: ArchConfig) -> Self {
        Self::build(arch, None)
    }

    fn build(arch: ArchConfig, rng: Option<ChaCha8Rng>) -> Self {
        arch.assert_valid();
        let mut store = ParamStore::new();
        let mut b = Builder { store: &mut store, rng };

        let n_bin = arch.binary_columns().len();
        let n_cont = arch.continuous_columns().len();
        let units = arch.hidden_units;

        let x_dec = XDecoder {
            hidden: b.stack("gen.x", ParamGroup::Generative, arch.z_dim, units, arch.hidden_layers),
            bin: (n_bin > 0).then(|| b.linear("gen.x.bin", ParamGroup::Generative, units, n_bin)),
            mean: (n_cont > 0).then(|| b.linear("gen.x.mean", ParamGroup::Generative, units, n_cont)),
            raw_std: (n_cont > 0).then(|| b.linear("gen.x.std", ParamGroup::Generative, units, n_cont)),
        };
        let t_dec = b.mlp("gen.t", ParamGroup::Generative, arch.z_dim, &arch, 1);
        let y_dec = b.two_arm("gen.y", ParamGroup::Generative, arch.z_dim, &arch, arch.y_out_dim());
        let z_enc = b.two_arm("inf.z", ParamGroup::Inference, arch.x_dim + 1, &arch, 2 * arch.z_dim);
        let t_aux = b.mlp("aux.t", ParamGroup::Auxiliary, arch.x_dim, &arch, 1);
        let y_aux = b.two_arm("aux.y", ParamGroup::Auxiliary, arch.x_dim, &arch, arch.y_out_dim());

        CevaeModel { arch, store, x_dec, t_dec, y_dec, z_enc, t_aux, y_aux }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// log p(x|z) + log p(t|z) + log p(y|t,z) per row, with y's head
    /// selected by the factual treatment and x handled per the binary
    /// mask.
    pub fn generative_log_prob(&self, tape: &mut Tape, z: NodeId, x: &Tensor, t: &Tensor, y: &Tensor) -> NodeId {
        let n = x.rows();
        assert_eq!(tape.value(z).shape(), (n, self.arch.z_dim), "z shape mismatch");
        assert_eq!(x.cols(), self.arch.x_dim, "x shape mismatch");
        assert_eq!(t.shape(), (n, 1), "t shape mismatch");
        assert_eq!(y.shape(), (n, 1), "y shape mismatch");

        let h = hidden_stack(tape, &self.store, &self.x_dec.hidden, z);
        let mut total: Option<NodeId> = None;
        let push = |tape: &mut Tape, term: NodeId, total: &mut Option<NodeId>| {
            *total = Some(match *total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        };

        if let Some(bin) = self.x_dec.bin {
            let logits = linear_fwd(tape, &self.store, bin, h);
            let xb = tape.constant(select_columns(x, &self.arch.binary_columns()));
            let lp = dists::bernoulli_log_prob(tape, &BernoulliP::new(logits), xb);
            push(tape, lp, &mut total);
        }
        if let (Some(mean), Some(raw_std)) = (self.x_dec.mean, self.x_dec.raw_std) {
            let mu = linear_fwd(tape, &self.store, mean, h);
            let raw = linear_fwd(tape, &self.store, raw_std, h);
            let std = dists::softplus_std(tape, raw);
            let g = GaussianDiag::new(tape, mu, std);
            let xc = tape.constant(select_columns(x, &self.arch.continuous_columns()));
            let lp = dists::gaussian_log_prob(tape, &g, xc);
            push(tape, lp, &mut total);
        }

        let t_logit = mlp_fwd(tape, &self.store, &self.t_dec, z);
        let t_node = tape.constant(t.clone());
        let lp_t = dists::bernoulli_log_prob(tape, &BernoulliP::new(t_logit), t_node);
        push(tape, lp_t, &mut total);

        let y_out = two_arm_fwd(tape, &self.store, &self.y_dec, z, t);
        let y_head = self.outcome_head(tape, y_out);
        let y_node = tape.constant(y.clone());
        let lp_y = y_head.log_prob(tape, y_node);
        push(tape, lp_y, &mut total);

        total.expect("at least the t and y terms are present")
    }

    /// q(z|x,t,y): diagonal Gaussian with softplus-positive std, arm
    /// picked by t.
    pub fn inference_posterior(&self, tape: &mut Tape, x: &Tensor, t: &Tensor, y: &Tensor) -> GaussianDiag {
        let n = x.rows();
        assert_eq!(x.cols(), self.arch.x_dim, "x shape mismatch");
        assert_eq!(t.shape(), (n, 1), "t shape mismatch");
        assert_eq!(y.shape(), (n, 1), "y shape mismatch");
        let input = tape.constant(Tensor::from_fn(n, self.arch.x_dim + 1, |i, j| {
            if j < self.arch.x_dim {
                x.get(i, j)
            } else {
                y.get(i, 0)
            }
        }));
        let out = two_arm_fwd(tape, &self.store, &self.z_enc, input, t);
        let z = self.arch.z_dim;
        let mean = tape.slice_cols(out, 0, z);
        let raw = tape.slice_cols(out, z, 2 * z);
        let std = dists::softplus_std(tape, raw);
        GaussianDiag::new(tape, mean, std)
    }

    /// q(t|x): the treatment predictor used to infer t* at query time.
    pub fn aux_treatment(&self, tape: &mut Tape, x: &Tensor) -> BernoulliP {
        assert_eq!(x.cols(), self.arch.x_dim, "x shape mismatch");
        let input = tape.constant(x.clone());
        BernoulliP::new(mlp_fwd(tape, &self.store, &self.t_aux, input))
    }

    /// q(y|x,t): the outcome predictor used to infer y* at query time.
    pub fn aux_outcome(&self, tape: &mut Tape, x: &Tensor, t: &Tensor) -> OutcomeHead {
        assert_eq!(x.cols(), self.arch.x_dim, "x shape mismatch");
        let input = tape.constant(x.clone());
        let out = two_arm_fwd(tape, &self.store, &self.y_aux, input, t);
        self.outcome_head(tape, out)
    }

    /// E[y | z, t=0] and E[y | z, t=1] from the generative y network,
    /// evaluating both arms on the same z.
    pub fn outcome_means_both_arms(&self, tape: &mut Tape, z: NodeId) -> (NodeId, NodeId) {
        let h = hidden_stack(tape, &self.store, &self.y_dec.trunk, z);
        let a0 = arm_fwd(tape, &self.store, &self.y_dec.arms[0], h);
        let a1 = arm_fwd(tape, &self.store, &self.y_dec.arms[1], h);
        let m0 = self.outcome_head(tape, a0).mean(tape);
        let m1 = self.outcome_head(tape, a1).mean(tape);
        (m0, m1)
    }

    fn outcome_head(&self, tape: &mut Tape, out: NodeId) -> OutcomeHead {
        if self.arch.y_is_binary {
            OutcomeHead::Binary(BernoulliP::new(out))
        } else {
            let mean = tape.slice_cols(out, 0, 1);
            let raw = tape.slice_cols(out, 1, 2);
            let std = dists::softplus_std(tape, raw);
            OutcomeHead::Continuous(GaussianDiag::new(tape, mean, std))
        }
    }
}

// ---- counterfactual query ----

#[derive(Clone, Copy, Debug)]
pub struct CfQueryConfig {
    /// Monte Carlo budget L for the posterior integral.
    pub mc_samples: usize,
}

impl Default for CfQueryConfig {
    fn default() -> Self {
        CfQueryConfig { mc_samples: 100 }
    }
}

/// Estimate (mu_hat_0, mu_hat_1) for every row of `x_star`.
///
/// Per sample l: draw t from q(t|x*), plug in y = E_q[y|x*,t], draw
/// z from q(z|x*,t,y) by reparameterization, and accumulate the
/// generative outcome means under both arms. The per-row ITE estimate is
/// mu_hat_1 - mu_hat_0.
///
/// The auxiliary predictions are computed once up front; each Monte Carlo
/// sample then runs on its own short-lived tape, so memory stays flat in
/// L and the whole batch shares every forward pass.
pub fn counterfactual_outcomes(
    model: &CevaeModel,
    x_star: &Tensor,
    cfg: &CfQueryConfig,
    rng: &mut impl Rng,
) -> (Tensor, Tensor) {
    assert!(cfg.mc_samples >= 1, "counterfactual query needs at least one posterior sample");
    assert_eq!(x_star.cols(), model.arch().x_dim, "x* column count differs from the architecture");
    let n = x_star.rows();
    let l = cfg.mc_samples;

    let (p_treat, y_aux_0, y_aux_1) = {
        let mut tape = Tape::new();
        let p = model.aux_treatment(&mut tape, x_star);
        let p_node = p.prob(&mut tape);
        let t0 = Tensor::zeros(n, 1);
        let t1 = Tensor::filled(n, 1, 1.0);
        let m0 = model.aux_outcome(&mut tape, x_star, &t0).mean(&mut tape);
        let m1 = model.aux_outcome(&mut tape, x_star, &t1).mean(&mut tape);
        (tape.value(p_node).clone(), tape.value(m0).clone(), tape.value(m1).clone())
    };

    let mut acc0 = Tensor::zeros(n, 1);
    let mut acc1 = Tensor::zeros(n, 1);
    for _ in 0..l {
        let t_l = Tensor::from_fn(n, 1, |i, _| rng.gen_bool(p_treat.get(i, 0)) as u8 as f64);
        let y_l = Tensor::from_fn(n, 1, |i, _| {
            if t_l.get(i, 0) == 1.0 {
                y_aux_1.get(i, 0)
            } else {
                y_aux_0.get(i, 0)
            }
        });
        let mut tape = Tape::new();
        let posterior = model.inference_posterior(&mut tape, x_star, &t_l, &y_l);
        let noise = tape.constant(dists::standard_normal(rng, n, model.arch().z_dim));
        let z = dists::reparam_sample(&mut tape, &posterior, noise);
        let (m0, m1) = model.outcome_means_both_arms(&mut tape, z);
        acc0 = acc0.add(tape.value(m0));
        acc1 = acc1.add(tape.value(m1));
    }
    let inv = 1.0 / l as f64;
    (acc0.scale(inv), acc1.scale(inv))
}
