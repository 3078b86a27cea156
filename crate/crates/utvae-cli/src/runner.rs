//! Dataset resolution and the single-run pipelines behind the
//! subcommands. A sweep cell reuses `run_train_cell`, so one code path
//! produces every RunRecord in the repository.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use utvae::datagen::{
    self, gen_synthetic, load_ihdp, read_synthetic_csv, split, split_fractions, DataError, Dataset, SplitSpec,
    SyntheticConfig, VarianceForm, YType,
};
use utvae::eval::{self, PropensitySource};
use utvae::networks::{load_checkpoint, save_checkpoint, ArchConfig, CevaeModel, CfQueryConfig};
use utvae::propensity::{estimate_propensity, uniform_treatment_weights, BallTreeIndex, DEFAULT_CLIP_HI, DEFAULT_CLIP_LO, DEFAULT_LEAF_SIZE, DEFAULT_SMOOTHING};
use utvae::training::{train, ObjectiveKind, TrainConfig};

use crate::config::{config_hash, ConfigMap, Resolver};
use crate::{CliError, CommonOpts, DataOpts, EvalArgs, GenArgs, IpwArgs, TrainArgs, TrainOpts};

pub fn rt(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn data_err(e: DataError) -> CliError {
    match e {
        DataError::InfeasibleSplit { .. } => CliError::Validation(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Write via a temp file and rename, so partial output never lands
/// under the final name.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| rt(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| rt(format!("renaming into {}: {e}", path.display())))
}

pub fn load_config(common: &CommonOpts) -> Result<ConfigMap, CliError> {
    match &common.config {
        Some(path) => ConfigMap::from_file(path),
        None => Ok(ConfigMap::default()),
    }
}

/// Output root: --out-dir flag, then the config file, then
/// UTVAE_OUT_DIR, then ./runs.
pub fn resolve_out_dir(common: &CommonOpts, cfg: &ConfigMap) -> PathBuf {
    if let Some(dir) = &common.out_dir {
        return dir.clone();
    }
    if let Some(dir) = cfg.get("out.dir") {
        return PathBuf::from(dir);
    }
    match std::env::var_os("UTVAE_OUT_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from("runs"),
    }
}

// ---- dataset sources ----

#[derive(Clone, Debug, PartialEq)]
pub enum DataKind {
    Synthetic,
    Csv(PathBuf),
    Ihdp(PathBuf),
}

#[derive(Clone, Debug)]
pub struct DataSpec {
    pub kind: DataKind,
    pub n: Option<usize>,
    pub alpha: f64,
    pub variance_form: VarianceForm,
    pub n_val: usize,
    pub n_test: usize,
    pub replicate: usize,
    pub subsample_treated: Option<f64>,
}

impl DataSpec {
    /// Short name for metric rows.
    pub fn label(&self) -> String {
        match &self.kind {
            DataKind::Synthetic => "synthetic".to_string(),
            DataKind::Csv(path) => format!(
                "csv:{}",
                path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
            ),
            DataKind::Ihdp(_) => format!("ihdp:rep{}", self.replicate),
        }
    }
}

fn parse_variance_form(s: &str) -> Result<VarianceForm, CliError> {
    match s {
        "mixture" => Ok(VarianceForm::Mixture),
        "literal" => Ok(VarianceForm::Literal),
        other => Err(CliError::Validation(format!(
            "variance form must be `mixture` or `literal`, found `{other}`"
        ))),
    }
}

pub fn resolve_data_spec(res: &mut Resolver, flags: &DataOpts) -> Result<DataSpec, CliError> {
    // --dataset overrides both data.kind and data.path
    let (kind_str, path_str) = match &flags.dataset {
        Some(s) if s == "synthetic" => (Some("synthetic".to_string()), None),
        Some(s) => match s.strip_prefix("ihdp:") {
            Some(dir) => (Some("ihdp".to_string()), Some(dir.to_string())),
            None => (Some("csv".to_string()), Some(s.clone())),
        },
        None => (None, None),
    };
    let kind_name = res.resolve("data.kind", kind_str, "synthetic".to_string())?;
    let path = res.resolve_opt("data.path", path_str)?;
    let kind = match kind_name.as_str() {
        "synthetic" => DataKind::Synthetic,
        "csv" => DataKind::Csv(PathBuf::from(path.ok_or_else(|| {
            CliError::Validation("data.kind=csv requires a file path (flag --dataset)".to_string())
        })?)),
        "ihdp" => DataKind::Ihdp(PathBuf::from(path.ok_or_else(|| {
            CliError::Validation("data.kind=ihdp requires a directory (flag --dataset ihdp:<dir>)".to_string())
        })?)),
        other => {
            return Err(CliError::Validation(format!(
                "data.kind must be synthetic, csv, or ihdp, found `{other}`"
            )))
        }
    };

    let n = res.resolve_opt("data.n", flags.n)?;
    let alpha = res.resolve("data.alpha", flags.alpha, 0.75)?;
    if !(0.5..1.0).contains(&alpha) {
        return Err(CliError::Validation(format!("alpha must lie in [0.5, 1), found {alpha}")));
    }
    let vf_name = res.resolve("data.variance_form", flags.variance_form.clone(), "mixture".to_string())?;
    let variance_form = parse_variance_form(&vf_name)?;
    let n_val = res.resolve("data.n_val", flags.n_val, 1000)?;
    let n_test = res.resolve("data.n_test", flags.n_test, 1000)?;
    let replicate = res.resolve("data.replicate", flags.replicate, 1)?;
    let subsample_treated = res.resolve_opt("data.subsample_treated", None::<f64>)?;
    if let Some(f) = subsample_treated {
        if !(0.0..1.0).contains(&f) {
            return Err(CliError::Validation(format!(
                "data.subsample_treated must lie in [0, 1), found {f}"
            )));
        }
    }

    // fail fast on missing inputs before any work starts
    match &kind {
        DataKind::Csv(p) if !p.is_file() => {
            return Err(CliError::Validation(format!("dataset file not found: {}", p.display())))
        }
        DataKind::Ihdp(dir) => {
            let file = dir.join(format!("ihdp_npci_{replicate}.csv"));
            if !file.is_file() {
                return Err(CliError::Validation(format!("IHDP replicate not found: {}", file.display())));
            }
        }
        _ => {}
    }

    Ok(DataSpec { kind, n, alpha, variance_form, n_val, n_test, replicate, subsample_treated })
}

// ---- dataset resolution ----

/// Splits ready for one run: covariates normalized with training-split
/// statistics everywhere, and for continuous outcomes the training and
/// validation y standardized (y_scale converts model-scale effects back
/// to the oracle's units; binary outcomes keep y_scale = 1).
pub struct ResolvedData {
    pub label: String,
    pub train: Dataset,
    pub val: Dataset,
    pub eval: Dataset,
    pub y_scale: f64,
}

pub fn resolve_data(spec: &DataSpec, seed: u64) -> Result<ResolvedData, CliError> {
    let label = spec.label();
    match &spec.kind {
        DataKind::Synthetic => {
            let n = spec.n.unwrap_or(4000);
            let cfg = SyntheticConfig {
                n: n + spec.n_val + spec.n_test,
                alpha: spec.alpha,
                variance_form: spec.variance_form,
                seed,
                ..SyntheticConfig::default()
            };
            let full = gen_synthetic(&cfg);
            let (train, val, test) =
                split(&full, &SplitSpec { n_train: n, n_val: spec.n_val, n_test: spec.n_test, seed }).map_err(data_err)?;
            Ok(normalize_splits(label, train, val, test))
        }
        DataKind::Csv(path) => {
            let full = read_synthetic_csv(path).map_err(data_err)?;
            let (train, val, test) = match spec.n {
                Some(n) => split(
                    &full,
                    &SplitSpec { n_train: n, n_val: spec.n_val, n_test: spec.n_test, seed },
                )
                .map_err(data_err)?,
                None => split_fractions(&full, 0.7, 0.15, seed).map_err(data_err)?,
            };
            Ok(normalize_splits(label, train, val, test))
        }
        DataKind::Ihdp(dir) => {
            let mut full = load_ihdp(dir, spec.replicate).map_err(data_err)?;
            if let Some(frac) = spec.subsample_treated {
                full = datagen::subsample_treated(&full, frac, seed);
            }
            // effect metrics use every row; training sees a 70/30 split
            let (train_raw, val_raw, _) = split_fractions(&full, 0.7, 0.3, seed).map_err(data_err)?;
            let norm = datagen::fit_normalization(&train_raw);
            let mut train = datagen::apply_normalization(&train_raw, &norm);
            let mut val = datagen::apply_normalization(&val_raw, &norm);
            let eval_ds = datagen::apply_normalization(&full, &norm);
            let mut y_scale = 1.0;
            if full.y_type == YType::Continuous {
                let m = train.y.mean();
                let var = train.y.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / train.y.len() as f64;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    train.y = train.y.offset(-m).scale(1.0 / sd);
                    val.y = val.y.offset(-m).scale(1.0 / sd);
                    y_scale = sd;
                }
            }
            Ok(ResolvedData { label, train, val, eval: eval_ds, y_scale })
        }
    }
}

fn normalize_splits(label: String, train: Dataset, val: Dataset, test: Dataset) -> ResolvedData {
    let norm = datagen::fit_normalization(&train);
    ResolvedData {
        label,
        train: datagen::apply_normalization(&train, &norm),
        val: datagen::apply_normalization(&val, &norm),
        eval: datagen::apply_normalization(&test, &norm),
        y_scale: 1.0,
    }
}

/// One dataset with no held-out splits, normalized on itself; for the
/// model-free IPW baseline.
pub fn resolve_flat(spec: &DataSpec, seed: u64) -> Result<(Dataset, String), CliError> {
    let label = spec.label();
    let ds = match &spec.kind {
        DataKind::Synthetic => {
            let cfg = SyntheticConfig {
                n: spec.n.unwrap_or(4000),
                alpha: spec.alpha,
                variance_form: spec.variance_form,
                seed,
                ..SyntheticConfig::default()
            };
            gen_synthetic(&cfg)
        }
        DataKind::Csv(path) => read_synthetic_csv(path).map_err(data_err)?,
        DataKind::Ihdp(dir) => {
            let mut full = load_ihdp(dir, spec.replicate).map_err(data_err)?;
            if let Some(frac) = spec.subsample_treated {
                full = datagen::subsample_treated(&full, frac, seed);
            }
            full
        }
    };
    let (normalized, _) = datagen::normalize(&ds);
    Ok((normalized, label))
}

// ---- train settings ----

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub data: DataSpec,
    pub objective: ObjectiveKind,
    pub epsilon: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub latent_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub mc_samples: usize,
    pub elbo_samples: usize,
    pub seed: u64,
    pub resolved: BTreeMap<String, String>,
}

impl TrainSettings {
    pub fn config_hash(&self) -> String {
        config_hash(&self.resolved)
    }
}

fn model_seed(seed: u64) -> u64 {
    seed.wrapping_add(1_000_003)
}

fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(2_000_003)
}

/// The per-run knobs shared by `train` and every sweep cell.
#[derive(Clone, Copy, Debug)]
pub struct TrainScalars {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub latent_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub mc_samples: usize,
    pub elbo_samples: usize,
    pub seed: u64,
}

pub fn resolve_train_scalars(
    res: &mut Resolver,
    train_flags: &TrainOpts,
    is_ihdp: bool,
) -> Result<TrainScalars, CliError> {
    let epochs = res.resolve("train.epochs", train_flags.epochs, 100)?;
    let lr = res.resolve("train.lr", train_flags.lr, 1e-3)?;
    let batch = res.resolve("train.batch", train_flags.batch, if is_ihdp { 128 } else { 256 })?;
    let latent_dim = res.resolve("train.latent_dim", train_flags.latent_dim, if is_ihdp { 20 } else { 5 })?;
    let hidden_layers = res.resolve("train.hidden_layers", train_flags.hidden_layers, 3)?;
    let hidden_units = res.resolve("train.hidden_units", train_flags.hidden_units, 200)?;
    let mc_samples = res.resolve("train.mc_samples", train_flags.mc_samples, 100)?;
    let elbo_samples = res.resolve("train.elbo_samples", train_flags.elbo_samples, 1)?;
    let seed = res.resolve("train.seed", train_flags.seed, 0)?;
    for (name, v) in [("epochs", epochs), ("batch", batch), ("latent_dim", latent_dim), ("mc_samples", mc_samples), ("elbo_samples", elbo_samples)] {
        if v == 0 {
            return Err(CliError::Validation(format!("{name} must be at least 1")));
        }
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(CliError::Validation(format!("lr must be a finite non-negative number, found {lr}")));
    }
    Ok(TrainScalars { epochs, lr, batch, latent_dim, hidden_layers, hidden_units, mc_samples, elbo_samples, seed })
}

pub fn settings_from_parts(
    data: DataSpec,
    objective: ObjectiveKind,
    epsilon: Option<f64>,
    s: TrainScalars,
    resolved: BTreeMap<String, String>,
) -> TrainSettings {
    TrainSettings {
        data,
        objective,
        epsilon,
        epochs: s.epochs,
        lr: s.lr,
        batch: s.batch,
        latent_dim: s.latent_dim,
        hidden_layers: s.hidden_layers,
        hidden_units: s.hidden_units,
        mc_samples: s.mc_samples,
        elbo_samples: s.elbo_samples,
        seed: s.seed,
        resolved,
    }
}

/// Resolve everything a training run needs; the sweep planner routes
/// its per-cell settings through the same scalar path.
pub fn resolve_train_settings(
    res: &mut Resolver,
    data_flags: &DataOpts,
    train_flags: &TrainOpts,
) -> Result<TrainSettings, CliError> {
    let data = resolve_data_spec(res, data_flags)?;
    let objective: ObjectiveKind = res
        .resolve_required("train.objective", train_flags.objective.clone(), "--objective")?
        .parse()
        .map_err(CliError::Validation)?;
    let mut epsilon = res.resolve_opt("train.epsilon", train_flags.epsilon)?;
    if objective.requires_weights() {
        if epsilon.is_none() {
            return Err(CliError::Validation(format!(
                "objective `{objective}` requires --epsilon for the propensity balls"
            )));
        }
    } else if epsilon.take().is_some() {
        eprintln!("warning: --epsilon is ignored for objective `{objective}`");
        res.unset("train.epsilon");
    }
    if let Some(e) = epsilon {
        if e <= 0.0 {
            return Err(CliError::Validation(format!("epsilon must be positive, found {e}")));
        }
    }

    let is_ihdp = matches!(data.kind, DataKind::Ihdp(_));
    let scalars = resolve_train_scalars(res, train_flags, is_ihdp)?;
    Ok(settings_from_parts(data, objective, epsilon, scalars, res.resolved().clone()))
}

// ---- metrics ----

pub struct Metrics {
    pub ate_pred: f64,
    pub ate_true: f64,
    pub ate_err: f64,
    pub pehe: f64,
}

/// Counterfactual-query metrics on the evaluation split, with
/// model-scale effects mapped back to outcome units.
pub fn evaluate_model(model: &CevaeModel, data: &ResolvedData, l: usize, seed: u64) -> Result<Metrics, CliError> {
    if model.arch().x_dim != data.eval.d() {
        return Err(rt(format!(
            "checkpoint expects {} covariates but the dataset has {}",
            model.arch().x_dim,
            data.eval.d()
        )));
    }
    let oracle = data.eval.oracle.as_ref().ok_or_else(|| rt(eval::EvalError::MissingOracle))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred_raw = eval::model_ite(model, &data.eval, &CfQueryConfig { mc_samples: l }, &mut rng);
    let pred: Vec<f64> = pred_raw.iter().map(|v| v * data.y_scale).collect();
    let truth: Vec<f64> = (0..data.eval.n()).map(|i| oracle.mu1.get(i, 0) - oracle.mu0.get(i, 0)).collect();
    let ate_pred = pred.iter().sum::<f64>() / pred.len() as f64;
    let ate_true = truth.iter().sum::<f64>() / truth.len() as f64;
    let pehe = eval::pehe_from_ite(&pred, &truth).pehe;
    Ok(Metrics { ate_pred, ate_true, ate_err: (ate_pred - ate_true).abs(), pehe })
}

// ---- run records ----

pub const METRICS_HEADER: &str = "dataset,objective,seed,epsilon,ate_err,pehe,runtime_s";

pub fn metrics_row(dataset: &str, objective: &str, seed: u64, epsilon: Option<f64>, m: &Metrics, runtime_s: f64) -> String {
    let eps = epsilon.map(|e| e.to_string()).unwrap_or_default();
    format!("{dataset},{objective},{seed},{eps},{},{},{runtime_s}", m.ate_err, m.pehe)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct CellOutcome {
    pub label: String,
    pub metrics: Metrics,
    pub final_val_elbo: f64,
    pub runtime_s: f64,
    pub checkpoint: PathBuf,
}

/// Train one (objective, epsilon, seed) cell and leave its full record
/// under `run_dir`: checkpoint, per-epoch curves, the metric row, and a
/// key=value RunRecord.
pub fn run_train_cell(st: &TrainSettings, run_dir: &Path) -> Result<CellOutcome, CliError> {
    let started_unix = unix_now();
    let started = Instant::now();
    let data = resolve_data(&st.data, st.seed)?;
    let weights = match st.epsilon {
        Some(eps) => {
            Some(uniform_treatment_weights(&data.train.x, &data.train.t, eps).map_err(rt)?)
        }
        None => None,
    };
    let arch = ArchConfig::for_dataset(&data.train, st.latent_dim, st.hidden_layers, st.hidden_units);
    let mut model = CevaeModel::new(arch, model_seed(st.seed));
    let cfg = TrainConfig {
        epochs: st.epochs,
        batch_size: st.batch,
        lr: st.lr,
        seed: st.seed,
        elbo_mc_samples: st.elbo_samples,
        objective: st.objective,
    };
    let report = train(&mut model, &data.train, &data.val, weights.as_ref(), &cfg).map_err(rt)?;

    std::fs::create_dir_all(run_dir).map_err(|e| rt(format!("creating {}: {e}", run_dir.display())))?;
    let ckpt = run_dir.join("model.ckpt");
    save_checkpoint(&model, &ckpt).map_err(rt)?;
    utvae::training::write_report_csv(&report, &run_dir.join("report.csv")).map_err(rt)?;

    let metrics = evaluate_model(&model, &data, st.mc_samples, eval_seed(st.seed))?;
    let runtime_s = started.elapsed().as_secs_f64();

    let mut record = st.resolved.clone();
    record.insert("config_hash".into(), st.config_hash());
    record.insert("dataset".into(), data.label.clone());
    record.insert("checkpoint".into(), ckpt.display().to_string());
    record.insert("started_unix".into(), started_unix.to_string());
    record.insert("finished_unix".into(), unix_now().to_string());
    record.insert("runtime_s".into(), runtime_s.to_string());
    record.insert("ate_pred".into(), metrics.ate_pred.to_string());
    record.insert("ate_true".into(), metrics.ate_true.to_string());
    record.insert("ate_err".into(), metrics.ate_err.to_string());
    record.insert("pehe".into(), metrics.pehe.to_string());
    record.insert("final_val_elbo".into(), report.final_val_elbo().to_string());
    record.insert("status".into(), "ok".into());
    write_record(&record, &run_dir.join("run.txt"))?;

    let row = metrics_row(&data.label, &st.objective.to_string(), st.seed, st.epsilon, &metrics, runtime_s);
    write_atomic(&run_dir.join("metrics.csv"), &format!("{METRICS_HEADER}\n{row}\n"))?;

    Ok(CellOutcome {
        label: data.label,
        metrics,
        final_val_elbo: report.final_val_elbo(),
        runtime_s,
        checkpoint: ckpt,
    })
}

pub fn write_record(record: &BTreeMap<String, String>, path: &Path) -> Result<(), CliError> {
    let mut text = String::new();
    for (k, v) in record {
        text.push_str(&format!("{k}={v}\n"));
    }
    write_atomic(path, &text)
}

pub fn run_dir_name(st: &TrainSettings) -> String {
    let short: String = st.config_hash().chars().take(8).collect();
    let data_tag = match &st.data.kind {
        DataKind::Synthetic => "synth".to_string(),
        DataKind::Csv(_) => "csv".to_string(),
        DataKind::Ihdp(_) => format!("ihdp{}", st.data.replicate),
    };
    format!("{}_{}_seed{}_{}", st.objective, data_tag, st.seed, short)
}

// ---- subcommands ----

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let out_dir = resolve_out_dir(&args.common, &cfg);
    let mut res = Resolver::new(cfg);
    let n = res.resolve("data.n", args.data.n, 4000)?;
    let alpha = res.resolve("data.alpha", args.data.alpha, 0.75)?;
    if !(0.5..1.0).contains(&alpha) {
        return Err(CliError::Validation(format!("alpha must lie in [0.5, 1), found {alpha}")));
    }
    let vf_name = res.resolve("data.variance_form", args.data.variance_form.clone(), "mixture".to_string())?;
    let variance_form = parse_variance_form(&vf_name)?;
    let seed = res.resolve("train.seed", args.seed, 0)?;

    let ds_cfg = SyntheticConfig { n, alpha, variance_form, seed, ..SyntheticConfig::default() };
    let ds = gen_synthetic(&ds_cfg);

    std::fs::create_dir_all(&out_dir).map_err(|e| rt(format!("creating {}: {e}", out_dir.display())))?;
    let stem = format!("synthetic_n{n}_alpha{alpha}_seed{seed}");
    let csv_path = out_dir.join(format!("{stem}.csv"));
    datagen::write_synthetic_csv(&ds, &csv_path).map_err(data_err)?;

    let mut record = res.resolved().clone();
    record.insert("config_hash".into(), config_hash(res.resolved()));
    record.insert("file".into(), format!("{stem}.csv"));
    record.insert("rows".into(), n.to_string());
    write_record(&record, &out_dir.join(format!("{stem}.manifest")))?;

    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let out_dir = resolve_out_dir(&args.common, &cfg);
    let mut res = Resolver::new(cfg);
    let st = resolve_train_settings(&mut res, &args.data, &args.train)?;
    let run_dir = out_dir.join(run_dir_name(&st));
    let outcome = run_train_cell(&st, &run_dir)?;
    println!(
        "{}: ate_err={} pehe={} val_elbo={}",
        outcome.label, outcome.metrics.ate_err, outcome.metrics.pehe, outcome.final_val_elbo
    );
    println!("checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let out_dir = resolve_out_dir(&args.common, &cfg);
    let mut res = Resolver::new(cfg);
    let spec = resolve_data_spec(&mut res, &args.data)?;
    let seed = res.resolve("train.seed", args.seed, 0)?;
    let mc_samples = res.resolve("train.mc_samples", args.mc_samples, 100)?;

    let model = load_checkpoint(&args.checkpoint).map_err(rt)?;
    let started = Instant::now();
    let data = resolve_data(&spec, seed)?;
    let metrics = evaluate_model(&model, &data, mc_samples, eval_seed(seed))?;
    let runtime_s = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(&out_dir).map_err(|e| rt(format!("creating {}: {e}", out_dir.display())))?;
    let row = metrics_row(&data.label, "checkpoint", seed, None, &metrics, runtime_s);
    write_atomic(&out_dir.join("eval_metrics.csv"), &format!("{METRICS_HEADER}\n{row}\n"))?;
    println!(
        "{}: ate_pred={} ate_true={} ate_err={} pehe={}",
        data.label, metrics.ate_pred, metrics.ate_true, metrics.ate_err, metrics.pehe
    );
    Ok(())
}

pub fn cmd_ipw(args: &IpwArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let out_dir = resolve_out_dir(&args.common, &cfg);
    let mut res = Resolver::new(cfg);
    let spec = resolve_data_spec(&mut res, &args.data)?;
    let seed = res.resolve("train.seed", args.seed, 0)?;
    let epsilon = res.resolve_opt("train.epsilon", args.epsilon)?;
    if let Some(e) = epsilon {
        if e <= 0.0 {
            return Err(CliError::Validation(format!("epsilon must be positive, found {e}")));
        }
    }

    let (ds, label) = resolve_flat(&spec, seed)?;
    let has_oracle_propensity = ds.oracle.as_ref().map_or(false, |o| o.propensity.is_some());
    if !has_oracle_propensity && epsilon.is_none() {
        return Err(CliError::Validation(
            "dataset carries no oracle propensities; provide --epsilon to estimate them".to_string(),
        ));
    }
    let ate_true = ds.oracle_ate().map(|v| v.to_string()).unwrap_or_default();

    let mut rows = Vec::new();
    if has_oracle_propensity {
        let r = eval::oracle_ipw_ate(&ds).map_err(rt)?;
        rows.push((r, String::new()));
    }
    if let Some(eps) = epsilon {
        let index = BallTreeIndex::build(&ds.x, DEFAULT_LEAF_SIZE).map_err(rt)?;
        let est = estimate_propensity(&index, &ds.t, eps, DEFAULT_SMOOTHING, DEFAULT_CLIP_LO, DEFAULT_CLIP_HI)
            .map_err(rt)?;
        let clipped = est.e.iter().filter(|&&e| e == DEFAULT_CLIP_LO || e == DEFAULT_CLIP_HI).count();
        if clipped > 0 {
            eprintln!("note: {clipped} of {} propensity estimates hit the clip bounds", ds.n());
        }
        let r = eval::ipw_ate(&ds, &est.e, PropensitySource::Estimated).map_err(rt)?;
        rows.push((r, eps.to_string()));
    }

    let mut text = String::from("dataset,source,epsilon,mu1_hat,mu0_hat,ate_hat,ate_true\n");
    for (r, eps) in &rows {
        let source = match r.source {
            PropensitySource::Oracle => "oracle",
            PropensitySource::Estimated => "estimated",
        };
        text.push_str(&format!(
            "{label},{source},{eps},{},{},{},{ate_true}\n",
            r.mu1_hat, r.mu0_hat, r.ate_hat
        ));
        println!("{label} {source}{}: ate_hat={}", if eps.is_empty() { String::new() } else { format!(" eps={eps}") }, r.ate_hat);
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| rt(format!("creating {}: {e}", out_dir.display())))?;
    write_atomic(&out_dir.join("ipw.csv"), &text)?;
    Ok(())
}
