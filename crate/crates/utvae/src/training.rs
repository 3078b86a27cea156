//! The four training objectives and the minibatch loop.
//!
//! All variants share one computational graph per batch: the per-sample
//! ELBO, its importance-weighted copy, and the auxiliary log-likelihood.
//! What distinguishes CEVAE, UTVAE, and the two hybrids is only which
//! root's backward pass each parameter group's gradient is harvested
//! from. Reverse mode hands out partial derivatives per leaf, so
//! "treated as constant" costs nothing: a group blocked in one
//! half-objective simply takes its gradient from the other root.
//!
//! With unit weights the weighted root multiplies by exactly 1.0, an
//! identity in IEEE arithmetic, so all four objectives produce
//! bit-identical gradients under the same RNG stream. The tests and the
//! acceptance suite lean on that.

use std::fmt;
use std::io::Write as IoWrite;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::datagen::Dataset;
use crate::diffcore::{Adam, AdamConfig, DiffError, GradientMap, NodeId, ParamGroup, Tape, Tensor};
use crate::dists::{self, kl_to_std_normal};
use crate::networks::CevaeModel;
use crate::propensity::ImportanceWeights;

// ---- objective selection ----

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ObjectiveKind {
    /// Observational ELBO for both parameter groups.
    Cevae,
    /// Importance-weighted ELBO for both groups.
    Utvae,
    /// Weighted ELBO for the generative parameters, observational for
    /// the inference parameters.
    UtvaeGen,
    /// Observational ELBO for the generative parameters, weighted for
    /// the inference parameters.
    UtvaeInf,
}

impl ObjectiveKind {
    pub fn requires_weights(self) -> bool {
        self != ObjectiveKind::Cevae
    }

    pub const ALL: [ObjectiveKind; 4] =
        [ObjectiveKind::Cevae, ObjectiveKind::Utvae, ObjectiveKind::UtvaeGen, ObjectiveKind::UtvaeInf];
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Cevae => "cevae",
            ObjectiveKind::Utvae => "utvae",
            ObjectiveKind::UtvaeGen => "utvae_gen",
            ObjectiveKind::UtvaeInf => "utvae_inf",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cevae" => Ok(ObjectiveKind::Cevae),
            "utvae" => Ok(ObjectiveKind::Utvae),
            "utvae_gen" | "utvae-gen" => Ok(ObjectiveKind::UtvaeGen),
            "utvae_inf" | "utvae-inf" => Ok(ObjectiveKind::UtvaeInf),
            other => Err(format!("unknown objective `{other}` (expected cevae, utvae, utvae_gen, or utvae_inf)")),
        }
    }
}

// ---- configuration and report ----

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Posterior samples per ELBO evaluation (S).
    pub elbo_mc_samples: usize,
    pub objective: ObjectiveKind,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveKind) -> Self {
        TrainConfig { epochs: 100, batch_size: 256, lr: 1e-3, seed: 0, elbo_mc_samples: 1, objective }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Per-epoch mean training ELBO (unweighted, for comparability
    /// across objectives).
    pub train_elbo: Vec<f64>,
    /// Per-epoch mean auxiliary log-likelihood on the training split.
    pub aux_ll: Vec<f64>,
    /// Per-epoch mean ELBO on the validation split, always unweighted.
    pub val_elbo: Vec<f64>,
    pub wall_clock_s: f64,
}

impl TrainReport {
    pub fn final_val_elbo(&self) -> f64 {
        *self.val_elbo.last().expect("at least one epoch")
    }
}

/// Write the per-epoch curves as CSV: epoch,train_elbo,val_elbo,aux_ll.
pub fn write_report_csv(report: &TrainReport, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("epoch,train_elbo,val_elbo,aux_ll\n");
    for e in 0..report.train_elbo.len() {
        out.push_str(&format!("{},{},{},{}\n", e + 1, report.train_elbo[e], report.val_elbo[e], report.aux_ll[e]));
    }
    let tmp = path.with_extension("csv.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
    }
    std::fs::rename(&tmp, path)
}

// ---- errors ----

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("objective `{0}` does not take importance weights")]
    UnexpectedWeights(ObjectiveKind),
    #[error("objective `{0}` requires importance weights")]
    MissingWeights(ObjectiveKind),
    #[error("expected {expected} importance weights, found {found}")]
    WeightMisalignment { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("at epoch {epoch}, step {step}: {source}")]
    Gradient { epoch: usize, step: usize, source: DiffError },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

// ---- core losses ----

/// Per-sample ELBO, unreduced (n x 1): (1/S) sum_s log p(x,t,y|z_s)
/// minus KL(q(z|x,t,y) || N(0,I)), with z_s drawn by reparameterization.
/// Left per-sample so callers can importance-weight before reducing.
pub fn elbo_per_sample(
    model: &CevaeModel,
    tape: &mut Tape,
    x: &Tensor,
    t: &Tensor,
    y: &Tensor,
    rng: &mut impl Rng,
    s: usize,
) -> NodeId {
    assert!(s >= 1, "at least one posterior sample required");
    let n = x.rows();
    let posterior = model.inference_posterior(tape, x, t, y);
    let mut recon: Option<NodeId> = None;
    for _ in 0..s {
        let noise = tape.constant(dists::standard_normal(rng, n, model.arch().z_dim));
        let z = dists::reparam_sample(tape, &posterior, noise);
        let lp = model.generative_log_prob(tape, z, x, t, y);
        recon = Some(match recon {
            Some(acc) => tape.add(acc, lp),
            None => lp,
        });
    }
    let mut recon = recon.expect("s >= 1");
    if s > 1 {
        recon = tape.scale(recon, 1.0 / s as f64);
    }
    let kl = kl_to_std_normal(tape, &posterior);
    tape.sub(recon, kl)
}

/// Per-sample auxiliary log-likelihood (n x 1):
/// log q(t|x) + log q(y|x,t). Always evaluated under the observational
/// distribution, never importance-weighted, for every objective.
pub fn aux_loss(model: &CevaeModel, tape: &mut Tape, x: &Tensor, t: &Tensor, y: &Tensor) -> NodeId {
    let t_head = model.aux_treatment(tape, x);
    let t_node = tape.constant(t.clone());
    let lp_t = dists::bernoulli_log_prob(tape, &t_head, t_node);
    let y_head = model.aux_outcome(tape, x, t);
    let y_node = tape.constant(y.clone());
    let lp_y = y_head.log_prob(tape, y_node);
    tape.add(lp_t, lp_y)
}

// ---- gradient routing ----

#[derive(Clone, Copy, Debug)]
pub struct BatchStats {
    /// Unweighted mean ELBO over the batch.
    pub elbo_mean: f64,
    /// Mean auxiliary log-likelihood over the batch.
    pub aux_mean: f64,
}

/// Gradients of the selected objective, as a map over all parameters:
/// ascent directions for the quantities the objective maximizes.
///
/// One graph serves every objective. Three roots are formed: the
/// weighted mean ELBO, the unweighted mean ELBO, and the mean auxiliary
/// term; each parameter group adopts the gradient from the root its
/// objective assigns it. The auxiliary group always comes from the aux
/// root. CEVAE takes no weights; the weighted root then multiplies by a
/// constant 1, keeping the graph shape and RNG stream identical across
/// objectives.
pub fn objective_gradients(
    model: &CevaeModel,
    x: &Tensor,
    t: &Tensor,
    y: &Tensor,
    weights: Option<&[f64]>,
    kind: ObjectiveKind,
    rng: &mut impl Rng,
    s: usize,
) -> Result<(GradientMap, BatchStats), TrainError> {
    objective_gradients_scaled(model, x, t, y, weights, kind, rng, s, 1.0, 1.0)
}

/// Test hook: the same routing with each half-objective scaled by a
/// constant, to pin down that a blocked group ignores the other half.
pub(crate) fn objective_gradients_scaled(
    model: &CevaeModel,
    x: &Tensor,
    t: &Tensor,
    y: &Tensor,
    weights: Option<&[f64]>,
    kind: ObjectiveKind,
    rng: &mut impl Rng,
    s: usize,
    weighted_scale: f64,
    unweighted_scale: f64,
) -> Result<(GradientMap, BatchStats), TrainError> {
    let n = x.rows();
    match (kind.requires_weights(), weights) {
        (false, Some(_)) => return Err(TrainError::UnexpectedWeights(kind)),
        (true, None) => return Err(TrainError::MissingWeights(kind)),
        _ => {}
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(TrainError::WeightMisalignment { expected: n, found: w.len() });
        }
    }
    let w_col = match weights {
        Some(w) => Tensor::column(w),
        None => Tensor::filled(n, 1, 1.0),
    };

    let mut tape = Tape::new();
    let elbo = elbo_per_sample(model, &mut tape, x, t, y, rng, s);
    let aux = aux_loss(model, &mut tape, x, t, y);
    let w_node = tape.constant(w_col);
    let welbo = tape.mul(w_node, elbo);
    let mut weighted_root = tape.mean(welbo);
    let mut unweighted_root = tape.mean(elbo);
    let aux_root = tape.mean(aux);
    if weighted_scale != 1.0 {
        weighted_root = tape.scale(weighted_root, weighted_scale);
    }
    if unweighted_scale != 1.0 {
        unweighted_root = tape.scale(unweighted_root, unweighted_scale);
    }

    let stats = BatchStats {
        elbo_mean: tape.value(unweighted_root).item() / unweighted_scale,
        aux_mean: tape.value(aux_root).item(),
    };

    let store = model.store();
    let n_params = store.len();
    let mut out = GradientMap::new(n_params);
    let (gen_root, inf_root) = match kind {
        ObjectiveKind::Cevae => (unweighted_root, unweighted_root),
        ObjectiveKind::Utvae => (weighted_root, weighted_root),
        ObjectiveKind::UtvaeGen => (weighted_root, unweighted_root),
        ObjectiveKind::UtvaeInf => (unweighted_root, weighted_root),
    };
    if gen_root == inf_root {
        let mut g = tape.backward(gen_root, n_params)?;
        out.adopt_group(&mut g, store, ParamGroup::Generative);
        out.adopt_group(&mut g, store, ParamGroup::Inference);
    } else {
        let mut gg = tape.backward(gen_root, n_params)?;
        out.adopt_group(&mut gg, store, ParamGroup::Generative);
        let mut gi = tape.backward(inf_root, n_params)?;
        out.adopt_group(&mut gi, store, ParamGroup::Inference);
    }
    let mut ga = tape.backward(aux_root, n_params)?;
    out.adopt_group(&mut ga, store, ParamGroup::Auxiliary);

    Ok((out, stats))
}

// ---- the loop ----

fn gather_rows(m: &Tensor, rows: &[usize]) -> Tensor {
    Tensor::from_fn(rows.len(), m.cols(), |i, j| m.get(rows[i], j))
}

/// Run the configured number of Adam epochs over `train_data`, shuffling
/// with the run RNG each epoch, and record per-epoch curves. The model is
/// left in its final state. Objectives are maximized (gradients are
/// negated into descent form before each Adam step).
pub fn train(
    model: &mut CevaeModel,
    train_data: &Dataset,
    val_data: &Dataset,
    weights: Option<&ImportanceWeights>,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    assert!(cfg.epochs >= 1, "at least one epoch required");
    assert!(cfg.batch_size >= 1, "batch size must be positive");
    let n = train_data.n();
    match (cfg.objective.requires_weights(), weights) {
        (false, Some(_)) => return Err(TrainError::UnexpectedWeights(cfg.objective)),
        (true, None) => return Err(TrainError::MissingWeights(cfg.objective)),
        _ => {}
    }
    if let Some(w) = weights {
        if w.w.len() != n {
            return Err(TrainError::WeightMisalignment { expected: n, found: w.w.len() });
        }
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), AdamConfig::with_lr(cfg.lr));
    let mut report = TrainReport {
        train_elbo: Vec::with_capacity(cfg.epochs),
        aux_ll: Vec::with_capacity(cfg.epochs),
        val_elbo: Vec::with_capacity(cfg.epochs),
        wall_clock_s: 0.0,
    };

    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut elbo_sum = 0.0;
        let mut aux_sum = 0.0;
        for (step, rows) in indices.chunks(cfg.batch_size).enumerate() {
            let x = gather_rows(&train_data.x, rows);
            let t = gather_rows(&train_data.t, rows);
            let y = gather_rows(&train_data.y, rows);
            let w_batch: Option<Vec<f64>> =
                weights.map(|w| rows.iter().map(|&i| w.w[i]).collect());
            let (mut grads, stats) = objective_gradients(
                model,
                &x,
                &t,
                &y,
                w_batch.as_deref(),
                cfg.objective,
                &mut rng,
                cfg.elbo_mc_samples,
            )?;
            if !stats.elbo_mean.is_finite() || !stats.aux_mean.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            // ascent on the objective = descent on its negation
            for id in model.store().ids() {
                if let Some(g) = grads.take(id) {
                    grads.set(id, g.scale(-1.0));
                }
            }
            adam.step(model.store_mut(), &grads)
                .map_err(|source| TrainError::Gradient { epoch, step, source })?;
            elbo_sum += stats.elbo_mean * rows.len() as f64;
            aux_sum += stats.aux_mean * rows.len() as f64;
        }
        report.train_elbo.push(elbo_sum / n as f64);
        report.aux_ll.push(aux_sum / n as f64);

        let mut tape = Tape::new();
        let val = elbo_per_sample(
            model,
            &mut tape,
            &val_data.x,
            &val_data.t,
            &val_data.y,
            &mut rng,
            cfg.elbo_mc_samples,
        );
        let val_mean = tape.mean(val);
        report.val_elbo.push(tape.value(val_mean).item());
    }
    report.wall_clock_s = started.elapsed().as_secs_f64();
    Ok(report)
}
