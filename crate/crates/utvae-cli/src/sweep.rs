//! The experiment-grid runner: objectives crossed with an epsilon grid,
//! seeds, and one optional data axis (alpha, n, or IHDP replicate),
//! executed as independent cells on a thread pool.
//!
//! The long-format runs CSV is the source of truth; the summary and the
//! epsilon-selection tables are derived from the same in-memory rows
//! that produced it, so recomputing them from the file reproduces the
//! aggregates bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use utvae::training::ObjectiveKind;

use crate::config::{config_hash, Resolver};
use crate::runner::{
    load_config, resolve_data_spec, resolve_out_dir, resolve_train_scalars, rt, run_dir_name,
    run_train_cell, settings_from_parts, write_atomic, write_record, DataKind, TrainSettings,
};
use crate::{CliError, SweepArgs};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisPoint {
    None,
    Alpha(f64),
    N(usize),
    Replicate(usize),
}

impl AxisPoint {
    fn name(self) -> &'static str {
        match self {
            AxisPoint::None => "none",
            AxisPoint::Alpha(_) => "alpha",
            AxisPoint::N(_) => "n",
            AxisPoint::Replicate(_) => "replicate",
        }
    }

    fn value_string(self) -> String {
        match self {
            AxisPoint::None => String::new(),
            AxisPoint::Alpha(a) => a.to_string(),
            AxisPoint::N(n) => n.to_string(),
            AxisPoint::Replicate(r) => r.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct CellSpec {
    pub settings: TrainSettings,
    pub axis: AxisPoint,
}

#[derive(Debug)]
pub struct SweepPlan {
    pub cells: Vec<CellSpec>,
    pub workers: Option<usize>,
    pub record: BTreeMap<String, String>,
}

fn parse_list<T>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, CliError> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| CliError::Validation(format!("{what}: cannot parse `{s}`: {e}"))))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(CliError::Validation(format!("{what}: empty list")));
    }
    Ok(items)
}

pub fn plan(res: &mut Resolver, args: &SweepArgs) -> Result<SweepPlan, CliError> {
    let base_data = resolve_data_spec(res, &args.data)?;
    let is_ihdp = matches!(base_data.kind, DataKind::Ihdp(_));
    let scalars = resolve_train_scalars(res, &args.train, is_ihdp)?;

    let objectives_raw =
        res.resolve_required("sweep.objectives", args.objectives.clone(), "--objectives")?;
    let objectives: Vec<ObjectiveKind> = parse_list::<String>(&objectives_raw, "sweep.objectives")?
        .iter()
        .map(|s| s.parse::<ObjectiveKind>().map_err(CliError::Validation))
        .collect::<Result<_, _>>()?;

    let epsilons: Vec<f64> = match res.resolve_opt("sweep.epsilons", args.epsilons.clone())? {
        Some(raw) => parse_list(&raw, "sweep.epsilons")?,
        None => Vec::new(),
    };
    if let Some(bad) = epsilons.iter().find(|e| **e <= 0.0) {
        return Err(CliError::Validation(format!("sweep.epsilons: every epsilon must be positive, found {bad}")));
    }
    if objectives.iter().any(|o| o.requires_weights()) && epsilons.is_empty() {
        return Err(CliError::Validation(
            "weighted objectives are in the grid but sweep.epsilons is empty (flag --epsilons)".to_string(),
        ));
    }

    let alphas = res.resolve_opt("sweep.alphas", args.alphas.clone())?;
    let ns = res.resolve_opt("sweep.ns", args.ns.clone())?;
    let replicates = res.resolve_opt("sweep.replicates", args.replicates.clone())?;
    let given = [alphas.is_some(), ns.is_some(), replicates.is_some()].iter().filter(|b| **b).count();
    if given > 1 {
        return Err(CliError::Validation(
            "at most one sweep axis of --alphas, --ns, --replicates may be given".to_string(),
        ));
    }
    let axis_points: Vec<AxisPoint> = if let Some(raw) = alphas {
        if is_ihdp {
            return Err(CliError::Validation("--alphas applies to synthetic data only".to_string()));
        }
        let values: Vec<f64> = parse_list(&raw, "sweep.alphas")?;
        if let Some(bad) = values.iter().find(|a| !(0.5..1.0).contains(*a)) {
            return Err(CliError::Validation(format!("sweep.alphas: alpha must lie in [0.5, 1), found {bad}")));
        }
        values.into_iter().map(AxisPoint::Alpha).collect()
    } else if let Some(raw) = ns {
        if is_ihdp {
            return Err(CliError::Validation("--ns applies to synthetic data only".to_string()));
        }
        let values: Vec<usize> = parse_list(&raw, "sweep.ns")?;
        if values.contains(&0) {
            return Err(CliError::Validation("sweep.ns: sizes must be positive".to_string()));
        }
        values.into_iter().map(AxisPoint::N).collect()
    } else if let Some(raw) = replicates {
        if !is_ihdp {
            return Err(CliError::Validation("--replicates applies to IHDP data only".to_string()));
        }
        parse_list::<usize>(&raw, "sweep.replicates")?.into_iter().map(AxisPoint::Replicate).collect()
    } else {
        vec![AxisPoint::None]
    };

    let seed_count = res.resolve("sweep.seeds", args.seeds, 1usize)?;
    if seed_count == 0 {
        return Err(CliError::Validation("sweep.seeds must be at least 1".to_string()));
    }
    let workers = res.resolve_opt("sweep.workers", args.workers)?;

    let mut cells = Vec::new();
    for &objective in &objectives {
        let eps_slots: Vec<Option<f64>> = if objective.requires_weights() {
            epsilons.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for eps in eps_slots {
            for &axis in &axis_points {
                for seed in 0..seed_count as u64 {
                    let mut data = base_data.clone();
                    let mut resolved = res.resolved().clone();
                    resolved.remove("sweep.objectives");
                    resolved.remove("sweep.epsilons");
                    resolved.remove("sweep.alphas");
                    resolved.remove("sweep.ns");
                    resolved.remove("sweep.replicates");
                    resolved.remove("sweep.seeds");
                    resolved.remove("sweep.workers");
                    match axis {
                        AxisPoint::None => {}
                        AxisPoint::Alpha(a) => {
                            data.alpha = a;
                            resolved.insert("data.alpha".into(), a.to_string());
                        }
                        AxisPoint::N(n) => {
                            data.n = Some(n);
                            resolved.insert("data.n".into(), n.to_string());
                        }
                        AxisPoint::Replicate(r) => {
                            data.replicate = r;
                            resolved.insert("data.replicate".into(), r.to_string());
                        }
                    }
                    resolved.insert("train.objective".into(), objective.to_string());
                    match eps {
                        Some(e) => {
                            resolved.insert("train.epsilon".into(), e.to_string());
                        }
                        None => {
                            resolved.remove("train.epsilon");
                        }
                    }
                    resolved.insert("train.seed".into(), seed.to_string());
                    let mut cell_scalars = scalars;
                    cell_scalars.seed = seed;
                    cells.push(CellSpec {
                        settings: settings_from_parts(data, objective, eps, cell_scalars, resolved),
                        axis,
                    });
                }
            }
        }
    }

    let mut record = res.resolved().clone();
    record.insert("config_hash".into(), config_hash(res.resolved()));
    record.insert("cells".into(), cells.len().to_string());
    Ok(SweepPlan { cells, workers, record })
}

// ---- execution ----

struct RunRow {
    dataset: String,
    objective: String,
    epsilon: String,
    axis: AxisPoint,
    alpha: String,
    n: String,
    replicate: String,
    seed: u64,
    outcome: Result<RowMetrics, String>,
}

#[derive(Clone, Copy)]
struct RowMetrics {
    ate_pred: f64,
    ate_true: f64,
    ate_err: f64,
    pehe: f64,
    final_val_elbo: f64,
    runtime_s: f64,
}

fn run_cell(cell: &CellSpec, cells_dir: &Path) -> RunRow {
    let st = &cell.settings;
    let (alpha, n, replicate) = match &st.data.kind {
        DataKind::Synthetic => (
            st.data.alpha.to_string(),
            st.data.n.unwrap_or(4000).to_string(),
            String::new(),
        ),
        DataKind::Csv(_) => (String::new(), st.data.n.map(|v| v.to_string()).unwrap_or_default(), String::new()),
        DataKind::Ihdp(_) => (String::new(), String::new(), st.data.replicate.to_string()),
    };
    let run_dir = cells_dir.join(run_dir_name(st));
    let outcome = run_train_cell(st, &run_dir)
        .map(|o| RowMetrics {
            ate_pred: o.metrics.ate_pred,
            ate_true: o.metrics.ate_true,
            ate_err: o.metrics.ate_err,
            pehe: o.metrics.pehe,
            final_val_elbo: o.final_val_elbo,
            runtime_s: o.runtime_s,
        })
        .map_err(|e| e.to_string());
    RunRow {
        dataset: st.data.label(),
        objective: st.objective.to_string(),
        epsilon: st.epsilon.map(|e| e.to_string()).unwrap_or_default(),
        axis: cell.axis,
        alpha,
        n,
        replicate,
        seed: st.seed,
        outcome,
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn mean_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

const RUNS_HEADER: &str =
    "dataset,objective,epsilon,alpha,n,replicate,seed,status,ate_pred,ate_true,ate_err,pehe,final_val_elbo,runtime_s,error";

fn runs_csv(rows: &[RunRow]) -> String {
    let mut text = format!("{RUNS_HEADER}\n");
    for r in rows {
        match &r.outcome {
            Ok(m) => {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{},{},ok,{},{},{},{},{},{},",
                    r.dataset, r.objective, r.epsilon, r.alpha, r.n, r.replicate, r.seed,
                    m.ate_pred, m.ate_true, m.ate_err, m.pehe, m.final_val_elbo, m.runtime_s
                );
            }
            Err(e) => {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{},{},error,,,,,,,{}",
                    r.dataset, r.objective, r.epsilon, r.alpha, r.n, r.replicate, r.seed,
                    csv_escape(e)
                );
            }
        }
    }
    text
}

struct Group {
    ate_err: Vec<f64>,
    pehe: Vec<f64>,
    val_elbo: Vec<f64>,
}

/// Successful rows keyed by (objective, epsilon, axis value), in row
/// order within each group.
fn group_rows(rows: &[RunRow]) -> BTreeMap<(String, String, String), Group> {
    let mut groups: BTreeMap<(String, String, String), Group> = BTreeMap::new();
    for r in rows {
        if let Ok(m) = &r.outcome {
            let key = (r.objective.clone(), r.epsilon.clone(), r.axis.value_string());
            let g = groups.entry(key).or_insert_with(|| Group { ate_err: Vec::new(), pehe: Vec::new(), val_elbo: Vec::new() });
            g.ate_err.push(m.ate_err);
            g.pehe.push(m.pehe);
            g.val_elbo.push(m.final_val_elbo);
        }
    }
    groups
}

fn summary_csv(rows: &[RunRow], axis_name: &str) -> String {
    let mut text = String::from("objective,epsilon,axis,axis_value,runs,ate_err_mean,ate_err_se,pehe_mean,pehe_se\n");
    for ((objective, epsilon, axis_value), g) in group_rows(rows) {
        let (am, ase) = mean_se(&g.ate_err);
        let (pm, pse) = mean_se(&g.pehe);
        let _ = writeln!(
            text,
            "{objective},{epsilon},{axis_name},{axis_value},{},{am},{ase},{pm},{pse}",
            g.ate_err.len()
        );
    }
    text
}

/// Per (objective, axis value), the epsilon whose runs achieved the
/// best mean validation ELBO.
fn selected_csv(rows: &[RunRow], axis_name: &str) -> String {
    let mut best: BTreeMap<(String, String), (f64, String, Group)> = BTreeMap::new();
    for ((objective, epsilon, axis_value), g) in group_rows(rows) {
        let (elbo_mean, _) = mean_se(&g.val_elbo);
        let key = (objective, axis_value);
        match best.get(&key) {
            Some((incumbent, _, _)) if *incumbent >= elbo_mean => {}
            _ => {
                best.insert(key, (elbo_mean, epsilon, g));
            }
        }
    }
    let mut text =
        String::from("objective,axis,axis_value,epsilon,val_elbo_mean,ate_err_mean,ate_err_se,pehe_mean,pehe_se\n");
    for ((objective, axis_value), (elbo_mean, epsilon, g)) in best {
        let (am, ase) = mean_se(&g.ate_err);
        let (pm, pse) = mean_se(&g.pehe);
        let _ = writeln!(text, "{objective},{axis_name},{axis_value},{epsilon},{elbo_mean},{am},{ase},{pm},{pse}");
    }
    text
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let out_dir = resolve_out_dir(&args.common, &cfg);
    let mut res = Resolver::new(cfg);
    let plan = plan(&mut res, args)?;
    let axis_name = plan.cells.first().map(|c| c.axis.name()).unwrap_or("none");

    std::fs::create_dir_all(&out_dir).map_err(|e| rt(format!("creating {}: {e}", out_dir.display())))?;
    let cells_dir = out_dir.join("cells");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.unwrap_or(0))
        .build()
        .map_err(rt)?;
    let rows: Vec<RunRow> = pool.install(|| plan.cells.par_iter().map(|c| run_cell(c, &cells_dir)).collect());

    write_atomic(&out_dir.join("sweep_runs.csv"), &runs_csv(&rows))?;
    write_atomic(&out_dir.join("sweep_summary.csv"), &summary_csv(&rows, axis_name))?;
    write_atomic(&out_dir.join("sweep_selected.csv"), &selected_csv(&rows, axis_name))?;
    write_record(&plan.record, &out_dir.join("sweep.txt"))?;

    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "{} cells, {} ok, {failed} failed; results under {}",
        rows.len(),
        rows.len() - failed,
        out_dir.display()
    );
    Ok(())
}
