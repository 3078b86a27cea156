//! End-to-end tests of the `utvae` binary: every subcommand is driven
//! through a real process so flag parsing, config layering, exit codes,
//! and the files left on disk are all exercised together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn utvae(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_utvae"));
    cmd.args(args);
    cmd.env_remove("UTVAE_OUT_DIR");
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = utvae(args).output().expect("spawn utvae");
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str], code: i32) -> Output {
    let out = utvae(args).output().expect("spawn utvae");
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code} for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// The flags that make a training run finish in milliseconds.
fn tiny_train_flags() -> Vec<&'static str> {
    vec![
        "--n", "96", "--n-val", "16", "--n-test", "16", "--epochs", "2", "--batch", "96",
        "--latent-dim", "2", "--hidden-layers", "1", "--hidden-units", "8", "--mc-samples", "4",
    ]
}

fn only_dir(parent: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(parent)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected exactly one run dir under {}", parent.display());
    dirs.pop().unwrap()
}

/// Parameter value lines from a checkpoint, keyed by parameter name.
fn checkpoint_params(path: &Path) -> BTreeMap<String, String> {
    let text = read(path);
    let mut lines = text.lines();
    let mut params = BTreeMap::new();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix("param ") {
            let name = rest.split_whitespace().next().unwrap().to_string();
            let values = lines.next().expect("value line after param header");
            params.insert(name, values.to_string());
        }
    }
    assert!(!params.is_empty(), "no parameters found in {}", path.display());
    params
}

fn group<'p>(params: &'p BTreeMap<String, String>, prefix: &str) -> Vec<(&'p str, &'p str)> {
    params
        .iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .map(|(name, values)| (name.as_str(), values.as_str()))
        .collect()
}

// ---- gen ----

#[test]
fn gen_is_byte_identical_across_reruns() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        run_ok(&["gen", "--out-dir", dir.to_str().unwrap(), "--n", "120", "--alpha", "0.8", "--seed", "7"]);
    }
    let stem = "synthetic_n120_alpha0.8_seed7";
    let csv = read(&a.join(format!("{stem}.csv")));
    assert_eq!(csv, read(&b.join(format!("{stem}.csv"))));
    assert_eq!(csv.lines().count(), 121, "header plus one line per row");
    assert_eq!(read(&a.join(format!("{stem}.manifest"))), read(&b.join(format!("{stem}.manifest"))));
}

#[test]
fn gen_rejects_alpha_one() {
    let tmp = TempDir::new().unwrap();
    let out = run_err(&["gen", "--out-dir", tmp.path().to_str().unwrap(), "--alpha", "1.0"], 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
}

// ---- train ----

#[test]
fn train_writes_a_full_run_directory() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("runs");
    let mut args = vec!["train", "--dataset", "synthetic", "--objective", "cevae", "--seed", "3"];
    args.extend(tiny_train_flags());
    args.extend(["--out-dir", out_dir.to_str().unwrap()]);
    run_ok(&args);

    let run_dir = only_dir(&out_dir);
    assert!(run_dir.file_name().unwrap().to_str().unwrap().starts_with("cevae_synth_seed3_"));
    for file in ["model.ckpt", "report.csv", "run.txt", "metrics.csv"] {
        assert!(run_dir.join(file).is_file(), "missing {file}");
    }
    let metrics = read(&run_dir.join("metrics.csv"));
    assert!(metrics.starts_with("dataset,objective,seed,epsilon,ate_err,pehe,runtime_s\n"));
    let record = read(&run_dir.join("run.txt"));
    assert!(record.contains("status=ok"));
    assert!(record.contains("config_hash="));
    let report = read(&run_dir.join("report.csv"));
    assert_eq!(report.lines().count(), 3, "header plus one line per epoch");
}

#[test]
fn epsilon_is_ignored_for_cevae_with_a_warning() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("runs");
    let mut args = vec!["train", "--dataset", "synthetic", "--objective", "cevae", "--epsilon", "1.0"];
    args.extend(tiny_train_flags());
    args.extend(["--out-dir", out_dir.to_str().unwrap()]);
    let out = run_ok(&args);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--epsilon is ignored"));
    let record = read(&only_dir(&out_dir).join("run.txt"));
    assert!(!record.contains("train.epsilon"), "the ignored epsilon must not enter the run record");
}

#[test]
fn weighted_objectives_require_epsilon() {
    let tmp = TempDir::new().unwrap();
    let out = run_err(
        &["train", "--dataset", "synthetic", "--objective", "utvae", "--out-dir", tmp.path().to_str().unwrap()],
        1,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
}

#[test]
fn unknown_objective_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    run_err(
        &["train", "--dataset", "synthetic", "--objective", "tarnet", "--out-dir", tmp.path().to_str().unwrap()],
        1,
    );
}

#[test]
fn training_metrics_replay_exactly_across_runs() {
    let tmp = TempDir::new().unwrap();
    let mut rows = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = tmp.path().join(sub);
        let mut args =
            vec!["train", "--dataset", "synthetic", "--objective", "utvae", "--epsilon", "0.5", "--seed", "9"];
        args.extend(tiny_train_flags());
        args.extend(["--out-dir", out_dir.to_str().unwrap()]);
        run_ok(&args);
        let metrics = read(&only_dir(&out_dir).join("metrics.csv"));
        rows.push(metrics.lines().nth(1).unwrap().to_string());
    }
    let without_runtime =
        |row: &str| row.split(',').take(6).collect::<Vec<_>>().join(",");
    assert_eq!(without_runtime(&rows[0]), without_runtime(&rows[1]));
}

#[test]
fn hybrid_first_steps_split_between_the_pure_objectives() {
    let tmp = TempDir::new().unwrap();
    let mut checkpoints = BTreeMap::new();
    for objective in ["cevae", "utvae", "utvae_gen", "utvae_inf"] {
        let out_dir = tmp.path().join(objective);
        let mut args = vec!["train", "--dataset", "synthetic", "--objective", objective];
        if objective != "cevae" {
            args.extend(["--epsilon", "0.25"]);
        }
        // one batch, one epoch: a single optimizer step from a shared init
        args.extend([
            "--n", "96", "--n-val", "16", "--n-test", "16", "--epochs", "1", "--batch", "96",
            "--lr", "0.05", "--latent-dim", "2", "--hidden-layers", "1", "--hidden-units", "8",
            "--mc-samples", "4", "--seed", "5",
        ]);
        args.extend(["--out-dir", out_dir.to_str().unwrap()]);
        run_ok(&args);
        checkpoints.insert(objective, checkpoint_params(&only_dir(&out_dir).join("model.ckpt")));
    }

    let (cevae, utvae) = (&checkpoints["cevae"], &checkpoints["utvae"]);
    let (gen_side, inf_side) = (&checkpoints["utvae_gen"], &checkpoints["utvae_inf"]);

    // the weighted and unweighted steps genuinely move differently
    assert_ne!(group(cevae, "gen."), group(utvae, "gen."));
    assert_ne!(group(cevae, "inf."), group(utvae, "inf."));

    assert_eq!(group(gen_side, "gen."), group(utvae, "gen."));
    assert_eq!(group(gen_side, "inf."), group(cevae, "inf."));
    assert_eq!(group(inf_side, "gen."), group(cevae, "gen."));
    assert_eq!(group(inf_side, "inf."), group(utvae, "inf."));
    for other in [utvae, gen_side, inf_side] {
        assert_eq!(group(cevae, "aux."), group(other, "aux."));
    }
}

// ---- eval ----

#[test]
fn eval_reproduces_training_metrics_from_the_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let train_dir = tmp.path().join("train");
    let mut args = vec!["train", "--dataset", "synthetic", "--objective", "cevae", "--seed", "3"];
    args.extend(tiny_train_flags());
    args.extend(["--out-dir", train_dir.to_str().unwrap()]);
    run_ok(&args);
    let run_dir = only_dir(&train_dir);
    let train_row = read(&run_dir.join("metrics.csv")).lines().nth(1).unwrap().to_string();

    let eval_dir = tmp.path().join("eval");
    let ckpt = run_dir.join("model.ckpt");
    run_ok(&[
        "eval", "--dataset", "synthetic", "--n", "96", "--n-val", "16", "--n-test", "16",
        "--checkpoint", ckpt.to_str().unwrap(), "--mc-samples", "4", "--seed", "3",
        "--out-dir", eval_dir.to_str().unwrap(),
    ]);
    let eval_row = read(&eval_dir.join("eval_metrics.csv")).lines().nth(1).unwrap().to_string();

    let effect_fields = |row: &str| {
        let fields: Vec<&str> = row.split(',').collect();
        (fields[4].to_string(), fields[5].to_string())
    };
    assert_eq!(effect_fields(&train_row), effect_fields(&eval_row));
}

// ---- ipw ----

#[test]
fn ipw_oracle_recovers_the_synthetic_ate() {
    let tmp = TempDir::new().unwrap();
    run_ok(&[
        "ipw", "--dataset", "synthetic", "--n", "20000", "--epsilon", "1.0", "--seed", "11",
        "--out-dir", tmp.path().to_str().unwrap(),
    ]);
    let text = read(&tmp.path().join("ipw.csv"));
    let mut saw_oracle = false;
    let mut saw_estimated = false;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let ate_hat: f64 = fields[5].parse().unwrap();
        assert!((ate_hat - 0.9737527429665887).abs() < 0.05, "ate_hat {ate_hat} is too far off");
        match fields[1] {
            "oracle" => saw_oracle = true,
            "estimated" => saw_estimated = true,
            other => panic!("unexpected source {other}"),
        }
    }
    assert!(saw_oracle && saw_estimated);
}

#[test]
fn ipw_on_a_csv_needs_an_epsilon() {
    let tmp = TempDir::new().unwrap();
    run_ok(&["gen", "--out-dir", tmp.path().to_str().unwrap(), "--n", "80", "--seed", "2"]);
    let csv = tmp.path().join("synthetic_n80_alpha0.75_seed2.csv");
    // the stored columns carry no propensities, so there is nothing to weight by
    let out = run_err(
        &["ipw", "--dataset", csv.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()],
        1,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("--epsilon"));
}

// ---- sweep ----

fn f(field: &str) -> f64 {
    field.parse().unwrap_or_else(|e| panic!("parsing `{field}`: {e}"))
}

fn mean_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn sweep_covers_the_grid_and_aggregates_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec![
        "sweep", "--dataset", "synthetic", "--objectives", "cevae,utvae", "--epsilons", "1.0",
        "--alphas", "0.6,0.9", "--seeds", "2", "--workers", "2",
    ];
    args.extend(tiny_train_flags());
    args.extend(["--out-dir", tmp.path().to_str().unwrap()]);
    run_ok(&args);

    let runs = read(&tmp.path().join("sweep_runs.csv"));
    let rows: Vec<&str> = runs.lines().skip(1).collect();
    assert_eq!(rows.len(), 8, "cevae x 2 alphas x 2 seeds plus utvae x 2 alphas x 2 seeds");
    assert!(rows.iter().all(|r| r.split(',').nth(7) == Some("ok")));

    // regroup the long-format rows and check the summary is exactly their aggregate
    let mut groups: BTreeMap<(String, String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        let key = (fields[1].to_string(), fields[2].to_string(), fields[3].to_string());
        let entry = groups.entry(key).or_default();
        entry.0.push(f(fields[10]));
        entry.1.push(f(fields[11]));
    }
    let summary = read(&tmp.path().join("sweep_summary.csv"));
    let summary_rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(summary_rows.len(), groups.len());
    for row in summary_rows {
        let fields: Vec<&str> = row.split(',').collect();
        let key = (fields[0].to_string(), fields[1].to_string(), fields[3].to_string());
        let (ate_errs, pehes) = &groups[&key];
        assert_eq!(fields[2], "alpha");
        assert_eq!(fields[4], ate_errs.len().to_string());
        let (am, ase) = mean_se(ate_errs);
        let (pm, pse) = mean_se(pehes);
        assert!((f(fields[5]) - am).abs() < 1e-12);
        assert!((f(fields[6]) - ase).abs() < 1e-12);
        assert!((f(fields[7]) - pm).abs() < 1e-12);
        assert!((f(fields[8]) - pse).abs() < 1e-12);
    }

    let selected = read(&tmp.path().join("sweep_selected.csv"));
    assert_eq!(selected.lines().count(), 5, "one choice per objective and alpha");
}

fn write_ihdp_replicate(dir: &Path, replicate: usize, rows: usize) {
    let mut text = String::new();
    for i in 0..rows {
        let t = i % 2;
        let mu0 = 1.0 + 0.1 * (i % 5) as f64;
        let mu1 = mu0 + 0.5 + 0.05 * (i % 3) as f64;
        let y_factual = if t == 1 { mu1 } else { mu0 };
        let y_cfactual = if t == 1 { mu0 } else { mu1 };
        text.push_str(&format!("{t},{y_factual},{y_cfactual},{mu0},{mu1}"));
        for j in 0..25 {
            text.push_str(&format!(",{}", ((i * 7 + j * 13 + replicate) % 19) as f64 / 19.0));
        }
        text.push('\n');
    }
    std::fs::write(dir.join(format!("ihdp_npci_{replicate}.csv")), text).unwrap();
}

#[test]
fn sweep_isolates_failing_cells() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("ihdp");
    std::fs::create_dir(&data_dir).unwrap();
    write_ihdp_replicate(&data_dir, 0, 44);
    write_ihdp_replicate(&data_dir, 1, 44);
    // replicate 2 is deliberately missing

    let dataset = format!("ihdp:{}", data_dir.display());
    let out_dir = tmp.path().join("sweep");
    run_ok(&[
        "sweep", "--dataset", &dataset, "--replicate", "1", "--objectives", "cevae",
        "--replicates", "0,1,2", "--seeds", "1", "--epochs", "1", "--batch", "32",
        "--latent-dim", "2", "--hidden-layers", "1", "--hidden-units", "4", "--mc-samples", "2",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);

    let runs = read(&out_dir.join("sweep_runs.csv"));
    let rows: Vec<&str> = runs.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    let status_of = |rep: &str| {
        rows.iter()
            .map(|r| r.split(',').collect::<Vec<_>>())
            .find(|fields| fields[5] == rep)
            .unwrap_or_else(|| panic!("no row for replicate {rep}"))[7]
            .to_string()
    };
    assert_eq!(status_of("0"), "ok");
    assert_eq!(status_of("1"), "ok");
    assert_eq!(status_of("2"), "error");
    let failing = rows.iter().find(|r| r.contains("error")).unwrap();
    assert!(failing.contains("ihdp_npci_2.csv"), "the error should name the missing file: {failing}");
}

// ---- configuration ----

#[test]
fn config_file_reordering_leaves_outputs_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg_a = tmp.path().join("a.cfg");
    let cfg_b = tmp.path().join("b.cfg");
    std::fs::write(&cfg_a, "[data]\nn = 64\nalpha = 0.8\n\n[train]\nseed = 4\n").unwrap();
    std::fs::write(&cfg_b, "[train]\nseed = 4\n\n[data]\nalpha = 0.8\nn = 64\n").unwrap();

    let mut manifests = Vec::new();
    for (cfg, sub) in [(&cfg_a, "a"), (&cfg_b, "b")] {
        let out_dir = tmp.path().join(sub);
        run_ok(&["gen", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
        manifests.push(read(&out_dir.join("synthetic_n64_alpha0.8_seed4.manifest")));
    }
    assert_eq!(manifests[0], manifests[1]);
    assert!(manifests[0].contains("config_hash="));
}

#[test]
fn flags_override_config_file_values() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("gen.cfg");
    std::fs::write(&cfg, "[data]\nn = 100\n").unwrap();
    run_ok(&[
        "gen", "--config", cfg.to_str().unwrap(), "--n", "50",
        "--out-dir", tmp.path().to_str().unwrap(),
    ]);
    let csv = read(&tmp.path().join("synthetic_n50_alpha0.75_seed0.csv"));
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "[data]\nrows = 100\n").unwrap();
    let out = run_err(
        &["gen", "--config", cfg.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()],
        1,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("rows"));
}

#[test]
fn out_dir_env_var_is_the_fallback() {
    let tmp = TempDir::new().unwrap();
    let out = utvae(&["gen", "--n", "32", "--seed", "1"])
        .env("UTVAE_OUT_DIR", tmp.path())
        .output()
        .expect("spawn utvae");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("synthetic_n32_alpha0.75_seed1.csv").is_file());
}

#[test]
fn missing_dataset_file_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.csv");
    let mut args = vec!["train", "--dataset", missing.to_str().unwrap(), "--objective", "cevae"];
    args.extend(["--out-dir", tmp.path().to_str().unwrap()]);
    let out = run_err(&args, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn out_dir_collision_with_a_file_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("blocked");
    std::fs::write(&blocker, "occupied").unwrap();
    run_err(&["gen", "--n", "16", "--out-dir", blocker.to_str().unwrap()], 2);
}
