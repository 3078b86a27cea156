//! Data: the synthetic generating process with exact oracle effects, the
//! IHDP-format loader, covariate normalization, and deterministic splits.
//!
//! The synthetic world has a hidden binary confounder z that drives the
//! treatment decision, a 1-d Gaussian proxy x whose mean and spread depend
//! on z, and a binary outcome whose rate depends on z and t:
//!
//!   z ~ B(0.5)
//!   t | z ~ B(alpha z + (1 - alpha)(1 - z))
//!   x | z ~ N(z, rho_z1^2 z + rho_z0^2 (1 - z))
//!   y | t, z ~ B(sigmoid(3 (z + 2 (2t - 1))))
//!
//! Because the confounder is one coin flip, p(z|x) has a closed form and
//! every dataset carries exact per-row potential-outcome means and
//! treatment propensities alongside the draws.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::diffcore::{sigmoid, Tensor};

// ---- errors ----

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    WrongColumnCount { path: String, line: usize, expected: usize, found: usize },
    #[error("{path}:{line}: could not parse `{field}` as a number")]
    MalformedField { path: String, line: usize, field: String },
    #[error("{path}:{line}: treatment must be 0 or 1, found {value}")]
    NonBinaryTreatment { path: String, line: usize, value: f64 },
    #[error("{path}: no data rows")]
    EmptyFile { path: String },
    #[error("split needs {needed} rows but the dataset has {available}")]
    InfeasibleSplit { needed: usize, available: usize },
}

// ---- dataset ----

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum YType {
    Binary,
    Continuous,
}

/// Exact per-row ground truth carried next to the draws.
#[derive(Clone, Debug)]
pub struct OracleInfo {
    /// True E[Y(0) | x] per row.
    pub mu0: Tensor,
    /// True E[Y(1) | x] per row.
    pub mu1: Tensor,
    /// True p(T=1 | x) per row, when the assignment mechanism is known.
    pub propensity: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// n x d covariates.
    pub x: Tensor,
    /// n x 1 treatment indicators, each exactly 0.0 or 1.0.
    pub t: Tensor,
    /// n x 1 outcomes.
    pub y: Tensor,
    pub y_type: YType,
    /// Per-covariate flag: true means the column is binary and gets a
    /// Bernoulli observation head; false means Gaussian.
    pub x_binary_mask: Vec<bool>,
    pub oracle: Option<OracleInfo>,
    /// Latent confounder draws, kept for auditing synthetic data.
    pub z: Option<Tensor>,
}

impl Dataset {
    /// Assemble a dataset, checking the cross-field invariants.
    pub fn new(
        x: Tensor,
        t: Tensor,
        y: Tensor,
        y_type: YType,
        x_binary_mask: Vec<bool>,
        oracle: Option<OracleInfo>,
        z: Option<Tensor>,
    ) -> Self {
        let n = x.rows();
        assert_eq!(t.shape(), (n, 1), "treatment must be n x 1");
        assert_eq!(y.shape(), (n, 1), "outcome must be n x 1");
        assert_eq!(x_binary_mask.len(), x.cols(), "binary mask length must equal covariate count");
        assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0), "treatment outside {{0,1}}");
        if y_type == YType::Binary {
            assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.0), "binary outcome outside {{0,1}}");
        }
        if let Some(o) = &oracle {
            assert_eq!(o.mu0.shape(), (n, 1), "oracle mu0 must be n x 1");
            assert_eq!(o.mu1.shape(), (n, 1), "oracle mu1 must be n x 1");
            if let Some(e) = &o.propensity {
                assert_eq!(e.shape(), (n, 1), "oracle propensity must be n x 1");
            }
        }
        if let Some(zs) = &z {
            assert_eq!(zs.shape(), (n, 1), "latent z must be n x 1");
        }
        Dataset { x, t, y, y_type, x_binary_mask, oracle, z }
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Number of treated rows.
    pub fn n_treated(&self) -> usize {
        self.t.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// A new dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let take = |m: &Tensor| {
            Tensor::from_fn(indices.len(), m.cols(), |i, j| m.get(indices[i], j))
        };
        Dataset {
            x: take(&self.x),
            t: take(&self.t),
            y: take(&self.y),
            y_type: self.y_type,
            x_binary_mask: self.x_binary_mask.clone(),
            oracle: self.oracle.as_ref().map(|o| OracleInfo {
                mu0: take(&o.mu0),
                mu1: take(&o.mu1),
                propensity: o.propensity.as_ref().map(&take),
            }),
            z: self.z.as_ref().map(&take),
        }
    }

    /// True average treatment effect over this dataset's rows, from the
    /// oracle columns.
    pub fn oracle_ate(&self) -> Option<f64> {
        let o = self.oracle.as_ref()?;
        Some(o.mu1.sub(&o.mu0).mean())
    }
}

// ---- synthetic generation ----

/// Which variance expression the proxy uses. The generating equations can
/// be read two ways; both are available and they give the same spread for
/// z = 1 but different spreads for z = 0.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VarianceForm {
    /// var = rho_z1^2 z + rho_z0^2 (1 - z): variances 9 and 25 at the
    /// defaults. The default.
    Mixture,
    /// var = rho_z1^2 + rho_z0^2 (1 - z): variances 9 and 34 at the
    /// defaults.
    Literal,
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticConfig {
    pub n: usize,
    /// Treatment-assignment balance: p(T=1|z=1) = alpha = p(T=0|z=0).
    /// 0.5 is fully randomized; must lie strictly inside (0,1).
    pub alpha: f64,
    pub rho_z1: f64,
    pub rho_z0: f64,
    pub variance_form: VarianceForm,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 4000,
            alpha: 0.75,
            rho_z1: 3.0,
            rho_z0: 5.0,
            variance_form: VarianceForm::Mixture,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn new(n: usize, alpha: f64, seed: u64) -> Self {
        SyntheticConfig { n, alpha, seed, ..Self::default() }
    }

    /// (var at z=1, var at z=0) under the configured form.
    pub fn variances(&self) -> (f64, f64) {
        let (r1sq, r0sq) = (self.rho_z1 * self.rho_z1, self.rho_z0 * self.rho_z0);
        match self.variance_form {
            VarianceForm::Mixture => (r1sq, r0sq),
            VarianceForm::Literal => (r1sq, r1sq + r0sq),
        }
    }

    fn assert_valid(&self) {
        assert!(self.n >= 1, "sample count must be positive");
        assert!(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie strictly inside (0,1)");
        assert!(self.rho_z1 > 0.0 && self.rho_z0 > 0.0, "rho parameters must be positive");
    }
}

/// Outcome rate E[y | t, z] = sigmoid(3 (z + 2 (2t - 1))).
pub fn outcome_rate(t: u8, z: u8) -> f64 {
    sigmoid(3.0 * (z as f64 + 2.0 * (2.0 * t as f64 - 1.0)))
}

/// Exact p(z=1 | x) by Bayes rule from the two Gaussian proxy densities
/// and the uniform prior on z.
pub fn posterior_z1(x: f64, cfg: &SyntheticConfig) -> f64 {
    let (v1, v0) = cfg.variances();
    // log N(x; 1, v1) - log N(x; 0, v0), with shared constants cancelled
    let ld1 = -0.5 * v1.ln() - (x - 1.0) * (x - 1.0) / (2.0 * v1);
    let ld0 = -0.5 * v0.ln() - x * x / (2.0 * v0);
    sigmoid(ld1 - ld0)
}

/// Population ATE of the synthetic process, by enumeration over z:
/// 0.5 [sigmoid(9) - sigmoid(-3)] + 0.5 [sigmoid(6) - sigmoid(-6)].
/// Independent of alpha and the rho parameters.
pub fn synthetic_true_ate() -> f64 {
    0.5 * ((outcome_rate(1, 1) - outcome_rate(0, 1)) + (outcome_rate(1, 0) - outcome_rate(0, 0)))
}

/// Draw a synthetic dataset with exact oracle columns attached.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Dataset {
    cfg.assert_valid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (v1, v0) = cfg.variances();
    let noise1 = Normal::new(1.0, v1.sqrt()).expect("valid normal");
    let noise0 = Normal::new(0.0, v0.sqrt()).expect("valid normal");

    let n = cfg.n;
    let mut x = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    let mut prop = Vec::with_capacity(n);

    for _ in 0..n {
        let zi: u8 = rng.gen_bool(0.5) as u8;
        let p_treat = if zi == 1 { cfg.alpha } else { 1.0 - cfg.alpha };
        let ti: u8 = rng.gen_bool(p_treat) as u8;
        let xi: f64 = if zi == 1 { rng.sample(noise1) } else { rng.sample(noise0) };
        let yi: u8 = rng.gen_bool(outcome_rate(ti, zi)) as u8;

        let pz1 = posterior_z1(xi, cfg);
        mu0.push(pz1 * outcome_rate(0, 1) + (1.0 - pz1) * outcome_rate(0, 0));
        mu1.push(pz1 * outcome_rate(1, 1) + (1.0 - pz1) * outcome_rate(1, 0));
        prop.push(pz1 * cfg.alpha + (1.0 - pz1) * (1.0 - cfg.alpha));

        x.push(xi);
        t.push(ti as f64);
        y.push(yi as f64);
        z.push(zi as f64);
    }

    Dataset::new(
        Tensor::column(&x),
        Tensor::column(&t),
        Tensor::column(&y),
        YType::Binary,
        vec![false],
        Some(OracleInfo {
            mu0: Tensor::column(&mu0),
            mu1: Tensor::column(&mu1),
            propensity: Some(Tensor::column(&prop)),
        }),
        Some(Tensor::column(&z)),
    )
}

// ---- IHDP loading ----

/// Columns per row in the IHDP replicate layout:
/// t, y_factual, y_cfactual, mu0, mu1, x1..x25.
pub const IHDP_COLUMNS: usize = 30;
pub const IHDP_COVARIATES: usize = 25;

/// Load replicate `replicate` (1-based) from `dir`, expecting the file
/// `ihdp_npci_<replicate>.csv` in the community layout.
pub fn load_ihdp(dir: &Path, replicate: usize) -> Result<Dataset, DataError> {
    load_ihdp_file(&dir.join(format!("ihdp_npci_{replicate}.csv")))
}

/// Load one IHDP replicate file: comma-separated, 30 columns
/// (t, y_factual, y_cfactual, mu0, mu1, x1..x25), optional header line.
pub fn load_ihdp_file(path: &Path) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
    let reader = BufReader::new(file);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io { path: display.clone(), source })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        // tolerate a single header line
        if idx == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != IHDP_COLUMNS {
            return Err(DataError::WrongColumnCount {
                path: display,
                line: idx + 1,
                expected: IHDP_COLUMNS,
                found: fields.len(),
            });
        }
        let mut row = Vec::with_capacity(IHDP_COLUMNS);
        for field in fields {
            let v = field.trim().parse::<f64>().map_err(|_| DataError::MalformedField {
                path: display.clone(),
                line: idx + 1,
                field: field.trim().to_string(),
            })?;
            row.push(v);
        }
        if row[0] != 0.0 && row[0] != 1.0 {
            return Err(DataError::NonBinaryTreatment { path: display, line: idx + 1, value: row[0] });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile { path: display });
    }

    let n = rows.len();
    let t = Tensor::from_fn(n, 1, |i, _| rows[i][0]);
    let y = Tensor::from_fn(n, 1, |i, _| rows[i][1]);
    let mu0 = Tensor::from_fn(n, 1, |i, _| rows[i][3]);
    let mu1 = Tensor::from_fn(n, 1, |i, _| rows[i][4]);
    let x = Tensor::from_fn(n, IHDP_COVARIATES, |i, j| rows[i][5 + j]);
    let mask = (0..IHDP_COVARIATES)
        .map(|j| (0..n).all(|i| x.get(i, j) == 0.0 || x.get(i, j) == 1.0))
        .collect();

    Ok(Dataset::new(
        x,
        t,
        y,
        YType::Continuous,
        mask,
        Some(OracleInfo { mu0, mu1, propensity: None }),
        None,
    ))
}

/// Remove a uniformly chosen fraction of the treated rows (deterministic
/// given the seed), preserving the order of the survivors. Used to study
/// imbalance on data that starts out closer to balanced.
pub fn subsample_treated(ds: &Dataset, remove_frac: f64, seed: u64) -> Dataset {
    assert!((0.0..1.0).contains(&remove_frac), "remove_frac must lie in [0,1)");
    let treated: Vec<usize> =
        (0..ds.n()).filter(|&i| ds.t.get(i, 0) == 1.0).collect();
    let n_remove = (remove_frac * treated.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = treated;
    shuffled.shuffle(&mut rng);
    let removed: std::collections::HashSet<usize> = shuffled.into_iter().take(n_remove).collect();
    let kept: Vec<usize> = (0..ds.n()).filter(|i| !removed.contains(i)).collect();
    ds.select(&kept)
}

// ---- normalization ----

/// Per-column treatment decided on a fitting split.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum ColumnNorm {
    /// Binary column, left untouched.
    Binary,
    /// Continuous column standardized to zero mean, unit variance.
    Standardize { mean: f64, std: f64 },
    /// Continuous column with (numerically) zero variance; removed.
    Dropped,
}

#[derive(Clone, Debug)]
pub struct Normalization {
    pub columns: Vec<ColumnNorm>,
}

impl Normalization {
    /// Indices of columns that were dropped for zero variance.
    pub fn dropped(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, ColumnNorm::Dropped))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Compute per-column statistics on `ds` (normally the training split).
pub fn fit_normalization(ds: &Dataset) -> Normalization {
    let n = ds.n() as f64;
    let columns = (0..ds.d())
        .map(|j| {
            if ds.x_binary_mask[j] {
                return ColumnNorm::Binary;
            }
            let mean = (0..ds.n()).map(|i| ds.x.get(i, j)).sum::<f64>() / n;
            let var = (0..ds.n()).map(|i| (ds.x.get(i, j) - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < 1e-12 {
                ColumnNorm::Dropped
            } else {
                ColumnNorm::Standardize { mean, std }
            }
        })
        .collect();
    Normalization { columns }
}

/// Apply previously fitted statistics, so validation and test splits are
/// transformed with the training split's numbers, never their own.
pub fn apply_normalization(ds: &Dataset, norm: &Normalization) -> Dataset {
    assert_eq!(norm.columns.len(), ds.d(), "normalization fitted on a different covariate count");
    let kept: Vec<usize> = (0..ds.d()).filter(|&j| norm.columns[j] != ColumnNorm::Dropped).collect();
    let x = Tensor::from_fn(ds.n(), kept.len(), |i, jj| {
        let j = kept[jj];
        match norm.columns[j] {
            ColumnNorm::Binary => ds.x.get(i, j),
            ColumnNorm::Standardize { mean, std } => (ds.x.get(i, j) - mean) / std,
            ColumnNorm::Dropped => unreachable!(),
        }
    });
    let mask = kept.iter().map(|&j| ds.x_binary_mask[j]).collect();
    Dataset::new(x, ds.t.clone(), ds.y.clone(), ds.y_type, mask, ds.oracle.clone(), ds.z.clone())
}

/// Fit on `ds` and apply in one step.
pub fn normalize(ds: &Dataset) -> (Dataset, Normalization) {
    let norm = fit_normalization(ds);
    let out = apply_normalization(ds, &norm);
    (out, norm)
}

// ---- splits ----

#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Disjoint train/val/test row subsets, deterministic given the seed.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let needed = spec.n_train + spec.n_val + spec.n_test;
    if needed > ds.n() {
        return Err(DataError::InfeasibleSplit { needed, available: ds.n() });
    }
    let mut indices: Vec<usize> = (0..ds.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    indices.shuffle(&mut rng);
    let train = ds.select(&indices[..spec.n_train]);
    let val = ds.select(&indices[spec.n_train..spec.n_train + spec.n_val]);
    let test = ds.select(&indices[spec.n_train + spec.n_val..needed]);
    Ok((train, val, test))
}

/// Split by fractions of the whole dataset (fractions must sum to 1).
pub fn split_fractions(ds: &Dataset, train: f64, val: f64, seed: u64) -> Result<(Dataset, Dataset, Dataset), DataError> {
    assert!(train > 0.0 && val >= 0.0 && train + val <= 1.0, "invalid split fractions");
    let n_train = (train * ds.n() as f64).round() as usize;
    let n_val = (val * ds.n() as f64).round() as usize;
    let n_test = ds.n() - n_train - n_val;
    split(ds, &SplitSpec { n_train, n_val, n_test, seed })
}

// ---- synthetic CSV round trip ----

/// Write a generated synthetic dataset as CSV with columns
/// z,t,x,y,mu0,mu1 so external tools can audit the process.
pub fn write_synthetic_csv(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    assert_eq!(ds.d(), 1, "synthetic CSV layout is for the 1-d proxy");
    let z = ds.z.as_ref().expect("synthetic dataset carries z");
    let oracle = ds.oracle.as_ref().expect("synthetic dataset carries oracle columns");
    let display = path.display().to_string();
    let file = fs::File::create(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<fs::File>, s: String| {
        w.write_all(s.as_bytes()).map_err(|source| DataError::Io { path: display.clone(), source })
    };
    emit(&mut w, "z,t,x,y,mu0,mu1\n".to_string())?;
    for i in 0..ds.n() {
        emit(
            &mut w,
            format!(
                "{},{},{},{},{},{}\n",
                z.get(i, 0),
                ds.t.get(i, 0),
                ds.x.get(i, 0),
                ds.y.get(i, 0),
                oracle.mu0.get(i, 0),
                oracle.mu1.get(i, 0)
            ),
        )?;
    }
    Ok(())
}

/// Read a dataset written by [`write_synthetic_csv`]. The float formatting
/// round-trips exactly, so a written dataset reads back bit-identical
/// (minus the oracle propensity, which the layout does not carry).
pub fn read_synthetic_csv(path: &Path) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
    let reader = BufReader::new(file);
    let mut cols: [Vec<f64>; 6] = Default::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io { path: display.clone(), source })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.starts_with('z')) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 6 {
            return Err(DataError::WrongColumnCount {
                path: display,
                line: idx + 1,
                expected: 6,
                found: fields.len(),
            });
        }
        for (k, field) in fields.iter().enumerate() {
            let v = field.trim().parse::<f64>().map_err(|_| DataError::MalformedField {
                path: display.clone(),
                line: idx + 1,
                field: field.trim().to_string(),
            })?;
            cols[k].push(v);
        }
    }
    if cols[0].is_empty() {
        return Err(DataError::EmptyFile { path: display });
    }
    Ok(Dataset::new(
        Tensor::column(&cols[2]),
        Tensor::column(&cols[1]),
        Tensor::column(&cols[3]),
        YType::Binary,
        vec![false],
        Some(OracleInfo {
            mu0: Tensor::column(&cols[4]),
            mu1: Tensor::column(&cols[5]),
            propensity: None,
        }),
        Some(Tensor::column(&cols[0])),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn true_ate_matches_frozen_enumeration() {
        // 0.5 [sigmoid(9) - sigmoid(-3) + sigmoid(6) - sigmoid(-6)],
        // evaluated independently to full precision
        assert_abs_diff_eq!(synthetic_true_ate(), 0.973_752_742_966_588_7, epsilon = 1e-15);
    }

    #[test]
    fn balanced_assignment_is_independent_of_z() {
        let cfg = SyntheticConfig::new(8000, 0.5, 3);
        let ds = gen_synthetic(&cfg);
        let n = ds.n() as f64;
        let p_hat = ds.t.mean();
        assert!((p_hat - 0.5).abs() < 3.0 / n.sqrt(), "p(T=1) was {p_hat}");

        // chi-square independence statistic on the 2x2 (z, t) table
        let z = ds.z.as_ref().unwrap();
        let mut counts = [[0.0_f64; 2]; 2];
        for i in 0..ds.n() {
            counts[z.get(i, 0) as usize][ds.t.get(i, 0) as usize] += 1.0;
        }
        let mut stat = 0.0;
        for zi in 0..2 {
            for ti in 0..2 {
                let row: f64 = counts[zi][0] + counts[zi][1];
                let col: f64 = counts[0][ti] + counts[1][ti];
                let expected = row * col / n;
                stat += (counts[zi][ti] - expected).powi(2) / expected;
            }
        }
        assert!(stat < 3.84, "chi-square statistic {stat} signals dependence");
    }

    #[test]
    fn conditional_treatment_rate_matches_alpha() {
        let cfg = SyntheticConfig::new(8000, 0.75, 5);
        let ds = gen_synthetic(&cfg);
        let z = ds.z.as_ref().unwrap();
        let z1: Vec<usize> = (0..ds.n()).filter(|&i| z.get(i, 0) == 1.0).collect();
        let rate = z1.iter().map(|&i| ds.t.get(i, 0)).sum::<f64>() / z1.len() as f64;
        let tol = 3.0 * (0.1875 / z1.len() as f64).sqrt();
        assert!((rate - 0.75).abs() < tol, "p(T=1|z=1) was {rate}");
    }

    #[test]
    fn oracle_ite_mean_converges_to_true_ate() {
        let cfg = SyntheticConfig::new(200_000, 0.75, 11);
        let ds = gen_synthetic(&cfg);
        let ate = ds.oracle_ate().unwrap();
        assert!((ate - synthetic_true_ate()).abs() < 0.005, "oracle ATE mean was {ate}");
    }

    #[test]
    fn bayes_posterior_matches_direct_density_ratio() {
        for form in [VarianceForm::Mixture, VarianceForm::Literal] {
            let cfg = SyntheticConfig { variance_form: form, ..SyntheticConfig::default() };
            let (v1, v0) = cfg.variances();
            let mut x = -10.0;
            while x <= 10.0 {
                let d1 = (-((x - 1.0) * (x - 1.0)) / (2.0 * v1)).exp() / v1.sqrt();
                let d0 = (-(x * x) / (2.0 * v0)).exp() / v0.sqrt();
                let direct = d1 / (d1 + d0);
                assert_abs_diff_eq!(posterior_z1(x, &cfg), direct, epsilon = 1e-10);
                x += 0.5;
            }
        }
    }

    #[test]
    fn factual_outcomes_follow_the_selected_arm() {
        let cfg = SyntheticConfig::new(50_000, 0.75, 17);
        let ds = gen_synthetic(&cfg);
        let z = ds.z.as_ref().unwrap();
        for zi in 0..2u8 {
            for ti in 0..2u8 {
                let cell: Vec<usize> = (0..ds.n())
                    .filter(|&i| z.get(i, 0) == zi as f64 && ds.t.get(i, 0) == ti as f64)
                    .collect();
                let rate = cell.iter().map(|&i| ds.y.get(i, 0)).sum::<f64>() / cell.len() as f64;
                let p = outcome_rate(ti, zi);
                let tol = 3.0 * (p * (1.0 - p) / cell.len() as f64).sqrt() + 1e-9;
                assert!(
                    (rate - p).abs() < tol,
                    "y rate in cell z={zi}, t={ti} was {rate}, expected {p}"
                );
            }
        }
    }

    #[test]
    fn proxy_variances_match_the_configured_form() {
        for (form, expect_v0) in [(VarianceForm::Mixture, 25.0), (VarianceForm::Literal, 34.0)] {
            let cfg = SyntheticConfig { n: 100_000, variance_form: form, seed: 23, ..SyntheticConfig::default() };
            let ds = gen_synthetic(&cfg);
            let z = ds.z.as_ref().unwrap();
            for (zi, expected) in [(1.0, 9.0), (0.0, expect_v0)] {
                let cell: Vec<f64> = (0..ds.n())
                    .filter(|&i| z.get(i, 0) == zi)
                    .map(|i| ds.x.get(i, 0))
                    .collect();
                let m = cell.iter().sum::<f64>() / cell.len() as f64;
                let var = cell.iter().map(|v| (v - m).powi(2)).sum::<f64>() / cell.len() as f64;
                let tol = 4.0 * expected * (2.0 / cell.len() as f64).sqrt();
                assert!((var - expected).abs() < tol, "var(x|z={zi}) was {var}, expected {expected}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig::new(500, 0.6, 99);
        let a = gen_synthetic(&cfg);
        let b = gen_synthetic(&cfg);
        assert_eq!(a.x, b.x);
        assert_eq!(a.t, b.t);
        assert_eq!(a.y, b.y);
    }

    #[test]
    #[should_panic(expected = "alpha must lie strictly inside (0,1)")]
    fn alpha_one_is_rejected() {
        gen_synthetic(&SyntheticConfig::new(10, 1.0, 0));
    }

    #[test]
    fn split_sizes_partition_and_determinism() {
        let ds = gen_synthetic(&SyntheticConfig::new(6000, 0.75, 1));
        let spec = SplitSpec { n_train: 4000, n_val: 1000, n_test: 1000, seed: 42 };
        let (train, val, test) = split(&ds, &spec).unwrap();
        assert_eq!((train.n(), val.n(), test.n()), (4000, 1000, 1000));

        let (train2, _, _) = split(&ds, &spec).unwrap();
        assert_eq!(train.x, train2.x);

        // partition: every original x value appears exactly once across splits
        let mut seen: Vec<f64> = train
            .x
            .data()
            .iter()
            .chain(val.x.data())
            .chain(test.x.data())
            .copied()
            .collect();
        let mut original = ds.x.data().to_vec();
        seen.sort_by(f64::total_cmp);
        original.sort_by(f64::total_cmp);
        assert_eq!(seen, original);
    }

    #[test]
    fn infeasible_split_is_an_error() {
        let ds = gen_synthetic(&SyntheticConfig::new(100, 0.75, 1));
        let spec = SplitSpec { n_train: 90, n_val: 20, n_test: 10, seed: 0 };
        assert!(matches!(split(&ds, &spec), Err(DataError::InfeasibleSplit { needed: 120, available: 100 })));
    }

    #[test]
    fn normalization_standardizes_continuous_and_keeps_binary() {
        let x = Tensor::from_fn(200, 2, |i, j| if j == 0 { i as f64 } else { (i % 2) as f64 });
        let t = Tensor::from_fn(200, 1, |i, _| (i % 2) as f64);
        let y = Tensor::zeros(200, 1);
        let ds = Dataset::new(x, t, y, YType::Binary, vec![false, true], None, None);
        let (out, norm) = normalize(&ds);
        let col0: Vec<f64> = (0..200).map(|i| out.x.get(i, 0)).collect();
        let mean = col0.iter().sum::<f64>() / 200.0;
        let var = col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        assert_eq!(out.x.get(3, 1), 1.0, "binary column must be untouched");
        assert!(norm.dropped().is_empty());

        // idempotence: refitting on the standardized output is a no-op
        let (out2, _) = normalize(&out);
        for (a, b) in out.x.data().iter().zip(out2.x.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_variance_column_is_dropped() {
        let x = Tensor::from_fn(50, 2, |i, j| if j == 0 { 7.5 } else { i as f64 });
        let t = Tensor::zeros(50, 1);
        let y = Tensor::zeros(50, 1);
        let ds = Dataset::new(x, t, y, YType::Binary, vec![false, false], None, None);
        let (out, norm) = normalize(&ds);
        assert_eq!(norm.dropped(), vec![0]);
        assert_eq!(out.d(), 1);
        assert_eq!(out.x_binary_mask, vec![false]);
    }

    #[test]
    fn validation_uses_training_statistics() {
        let make = |offset: f64| {
            let x = Tensor::from_fn(100, 1, |i, _| offset + i as f64);
            Dataset::new(x, Tensor::zeros(100, 1), Tensor::zeros(100, 1), YType::Binary, vec![false], None, None)
        };
        let train = make(0.0);
        let val = make(1000.0);
        let norm = fit_normalization(&train);
        let val_out = apply_normalization(&val, &norm);
        // the val split is far from the training mean, so it must NOT be
        // centered at zero after the transform
        assert!(val_out.x.mean() > 10.0);
    }

    #[test]
    fn subsample_treated_removes_the_requested_fraction() {
        let ds = gen_synthetic(&SyntheticConfig::new(2000, 0.75, 3));
        let before = ds.n_treated();
        let out = subsample_treated(&ds, 0.4, 8);
        let expected_removed = (0.4 * before as f64).round() as usize;
        assert_eq!(out.n_treated(), before - expected_removed);
        assert_eq!(out.n(), ds.n() - expected_removed);
        // deterministic
        let again = subsample_treated(&ds, 0.4, 8);
        assert_eq!(out.x, again.x);
    }

    #[test]
    fn synthetic_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synth.csv");
        let ds = gen_synthetic(&SyntheticConfig::new(300, 0.75, 21));
        write_synthetic_csv(&ds, &path).unwrap();
        let back = read_synthetic_csv(&path).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.t, ds.t);
        assert_eq!(back.y, ds.y);
        assert_eq!(back.z.as_ref().unwrap(), ds.z.as_ref().unwrap());
        assert_eq!(back.oracle.as_ref().unwrap().mu0, ds.oracle.as_ref().unwrap().mu0);

        // byte determinism on rewrite
        let path2 = dir.path().join("synth2.csv");
        write_synthetic_csv(&ds, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    fn write_ihdp_fixture(dir: &Path, name: &str, rows: &[String]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut body = String::new();
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        fs::write(&path, body).unwrap();
        path
    }

    fn ihdp_row(t: f64, x_first: f64) -> String {
        let mut fields = vec![t.to_string(), "2.5".into(), "3.5".into(), "3.0".into(), "7.0".into()];
        fields.push(x_first.to_string());
        for j in 0..24 {
            // x2..x6 continuous-ish, x7..x25 binary
            if j < 5 {
                fields.push(format!("{}", 0.1 * (j as f64 + 1.0) + x_first));
            } else {
                fields.push(((j % 2) as f64).to_string());
            }
        }
        fields.join(",")
    }

    #[test]
    fn ihdp_loader_reads_layout_and_detects_binary_columns() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<String> = (0..10).map(|i| ihdp_row((i % 3 == 0) as u8 as f64, i as f64 * 0.3)).collect();
        write_ihdp_fixture(dir.path(), "ihdp_npci_1.csv", &rows);
        let ds = load_ihdp(dir.path(), 1).unwrap();
        assert_eq!(ds.n(), 10);
        assert_eq!(ds.d(), 25);
        assert_eq!(ds.n_treated(), 4);
        assert_eq!(ds.y_type, YType::Continuous);
        assert_eq!(ds.y.get(0, 0), 2.5);
        let o = ds.oracle.as_ref().unwrap();
        assert_eq!(o.mu1.get(0, 0) - o.mu0.get(0, 0), 4.0);
        // x7..x25 were written as constant 0/1 patterns
        assert!(!ds.x_binary_mask[0]);
        assert!(ds.x_binary_mask[6]);
        assert_eq!(ds.x_binary_mask.iter().filter(|&&b| b).count(), 19);
    }

    #[test]
    fn ihdp_loader_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let short = write_ihdp_fixture(dir.path(), "short.csv", &["1,2,3".to_string()]);
        assert!(matches!(load_ihdp_file(&short), Err(DataError::WrongColumnCount { found: 3, .. })));

        let bad_t = write_ihdp_fixture(dir.path(), "bad_t.csv", &[ihdp_row(2.0, 0.0)]);
        assert!(matches!(load_ihdp_file(&bad_t), Err(DataError::NonBinaryTreatment { value, .. }) if value == 2.0));

        let garbled = ihdp_row(1.0, 0.0).replace("2.5", "abc");
        let bad_field = write_ihdp_fixture(dir.path(), "bad_field.csv", &[garbled]);
        assert!(matches!(load_ihdp_file(&bad_field), Err(DataError::MalformedField { .. })));

        assert!(matches!(load_ihdp(dir.path(), 77), Err(DataError::Io { .. })));
    }

    proptest! {
        #[test]
        fn posterior_is_a_probability(x in -100.0..100.0f64) {
            let cfg = SyntheticConfig::default();
            let p = posterior_z1(x, &cfg);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn splits_partition_for_any_feasible_sizes(
            n_train in 1usize..60,
            n_val in 0usize..30,
            n_test in 0usize..30,
            seed in 0u64..500,
        ) {
            let ds = gen_synthetic(&SyntheticConfig::new(120, 0.75, 2));
            let spec = SplitSpec { n_train, n_val, n_test, seed };
            let (train, val, test) = split(&ds, &spec).unwrap();
            prop_assert_eq!(train.n() + val.n() + test.n(), n_train + n_val + n_test);
            let mut all: Vec<f64> = train.x.data().iter().chain(val.x.data()).chain(test.x.data()).copied().collect();
            all.sort_by(f64::total_cmp);
            all.dedup();
            prop_assert_eq!(all.len(), n_train + n_val + n_test, "splits overlap");
        }
    }
}
