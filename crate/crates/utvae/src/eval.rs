//! Treatment-effect metrics and the inverse-probability-weighting
//! baseline.
//!
//! Everything here is evaluated against oracle conditional means
//! (mu0, mu1) carried in the dataset, never against sampled
//! counterfactual draws, so the metrics measure the estimator and not
//! outcome noise.

use rand::Rng;
use thiserror::Error;

use crate::datagen::Dataset;
use crate::networks::{counterfactual_outcomes, CevaeModel, CfQueryConfig};

// ---- errors ----

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset carries no oracle outcome means")]
    MissingOracle,
    #[error("dataset carries no oracle propensities")]
    MissingPropensity,
    #[error("propensity[{index}] = {value} is outside the open interval (0, 1)")]
    PropensityOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} propensities, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("both treatment groups must be non-empty (treated: {treated}, control: {control})")]
    EmptyArm { treated: usize, control: usize },
}

// ---- results ----

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AteResult {
    pub ate_pred: f64,
    pub ate_true: f64,
    pub abs_err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeheResult {
    /// Root-mean-square error of per-row treatment-effect predictions.
    pub pehe: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PropensitySource {
    Oracle,
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IpwResult {
    /// Reweighted mean of treated outcomes: mean of 1[T=1] Y / e(X).
    pub mu1_hat: f64,
    /// Reweighted mean of control outcomes: mean of 1[T=0] Y / (1-e(X)).
    pub mu0_hat: f64,
    pub ate_hat: f64,
    pub source: PropensitySource,
}

// ---- model metrics ----

/// Predicted per-row treatment effects from the counterfactual query.
pub fn model_ite(model: &CevaeModel, eval_ds: &Dataset, cfg: &CfQueryConfig, rng: &mut impl Rng) -> Vec<f64> {
    let (m0, m1) = counterfactual_outcomes(model, &eval_ds.x, cfg, rng);
    (0..eval_ds.n()).map(|i| m1.get(i, 0) - m0.get(i, 0)).collect()
}

fn oracle_ite(ds: &Dataset) -> Result<Vec<f64>, EvalError> {
    let oracle = ds.oracle.as_ref().ok_or(EvalError::MissingOracle)?;
    Ok((0..ds.n()).map(|i| oracle.mu1.get(i, 0) - oracle.mu0.get(i, 0)).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population average treatment effect over the evaluation rows,
/// compared to the oracle mean over the same rows.
pub fn model_ate(
    model: &CevaeModel,
    eval_ds: &Dataset,
    cfg: &CfQueryConfig,
    rng: &mut impl Rng,
) -> Result<AteResult, EvalError> {
    let truth = oracle_ite(eval_ds)?;
    let pred = model_ite(model, eval_ds, cfg, rng);
    let ate_pred = mean(&pred);
    let ate_true = mean(&truth);
    Ok(AteResult { ate_pred, ate_true, abs_err: (ate_pred - ate_true).abs() })
}

/// Root-mean-square error between predicted and true per-row effects.
pub fn model_pehe(
    model: &CevaeModel,
    eval_ds: &Dataset,
    cfg: &CfQueryConfig,
    rng: &mut impl Rng,
) -> Result<PeheResult, EvalError> {
    let truth = oracle_ite(eval_ds)?;
    let pred = model_ite(model, eval_ds, cfg, rng);
    Ok(pehe_from_ite(&pred, &truth))
}

/// The PEHE formula alone, for callers that already hold both effect
/// vectors.
pub fn pehe_from_ite(pred: &[f64], truth: &[f64]) -> PeheResult {
    assert_eq!(pred.len(), truth.len(), "effect vectors must align");
    assert!(!pred.is_empty(), "PEHE of an empty set is undefined");
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    PeheResult { pehe: mse.sqrt() }
}

// ---- inverse probability weighting ----

/// The IPW estimator: mu_t is estimated as the mean over all rows of
/// the factual outcome, kept only when the row received arm t and
/// divided by that arm's assignment probability.
pub fn ipw_ate(ds: &Dataset, e: &[f64], source: PropensitySource) -> Result<IpwResult, EvalError> {
    let n = ds.n();
    if e.len() != n {
        return Err(EvalError::LengthMismatch { expected: n, found: e.len() });
    }
    if let Some((index, &value)) = e.iter().enumerate().find(|(_, v)| !(0.0 < **v && **v < 1.0)) {
        return Err(EvalError::PropensityOutOfRange { index, value });
    }
    let mut sum1 = 0.0;
    let mut sum0 = 0.0;
    for i in 0..n {
        let y = ds.y.get(i, 0);
        if ds.t.get(i, 0) == 1.0 {
            sum1 += y / e[i];
        } else {
            sum0 += y / (1.0 - e[i]);
        }
    }
    let mu1_hat = sum1 / n as f64;
    let mu0_hat = sum0 / n as f64;
    Ok(IpwResult { mu1_hat, mu0_hat, ate_hat: mu1_hat - mu0_hat, source })
}

/// IPW with the dataset's own oracle propensities.
pub fn oracle_ipw_ate(ds: &Dataset) -> Result<IpwResult, EvalError> {
    let prop = ds
        .oracle
        .as_ref()
        .and_then(|o| o.propensity.as_ref())
        .ok_or(EvalError::MissingPropensity)?;
    let e: Vec<f64> = (0..ds.n()).map(|i| prop.get(i, 0)).collect();
    ipw_ate(ds, &e, PropensitySource::Oracle)
}

/// The unadjusted difference of group means, as the naive baseline the
/// IPW estimator is judged against.
pub fn diff_in_means(ds: &Dataset) -> Result<f64, EvalError> {
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for i in 0..ds.n() {
        let arm = ds.t.get(i, 0) as usize;
        sum[arm] += ds.y.get(i, 0);
        count[arm] += 1;
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(EvalError::EmptyArm { treated: count[1], control: count[0] });
    }
    Ok(sum[1] / count[1] as f64 - sum[0] / count[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_synthetic, synthetic_true_ate, SyntheticConfig, YType};
    use crate::diffcore::Tensor;
    use crate::networks::ArchConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed_model() -> CevaeModel {
        CevaeModel::zeroed(ArchConfig {
            x_dim: 1,
            x_binary_mask: vec![false],
            z_dim: 2,
            hidden_layers: 1,
            hidden_units: 8,
            y_is_binary: true,
        })
    }

    #[test]
    fn constant_model_ate_error_equals_the_true_ate() {
        // a zeroed model predicts identical arms, so ITE is exactly 0
        // and the error is the oracle ATE itself
        let ds = gen_synthetic(&SyntheticConfig::new(2000, 0.75, 17));
        let model = zeroed_model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = model_ate(&model, &ds, &CfQueryConfig { mc_samples: 8 }, &mut rng).unwrap();
        assert_eq!(r.ate_pred, 0.0);
        assert_eq!(r.abs_err, r.ate_true);
        assert_abs_diff_eq!(r.ate_true, synthetic_true_ate(), epsilon = 0.03);
    }

    #[test]
    fn ate_error_is_invariant_to_row_order() {
        let ds = gen_synthetic(&SyntheticConfig::new(500, 0.75, 23));
        let mut reversed: Vec<usize> = (0..ds.n()).collect();
        reversed.reverse();
        let ds_rev = ds.select(&reversed);
        let model = zeroed_model();
        let cfg = CfQueryConfig { mc_samples: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = model_ate(&model, &ds, &cfg, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = model_ate(&model, &ds_rev, &cfg, &mut rng).unwrap();
        assert_abs_diff_eq!(a.abs_err, b.abs_err, epsilon = 1e-12);
    }

    #[test]
    fn oracle_wired_model_recovers_the_ate_and_pehe() {
        let cfg = SyntheticConfig::new(1000, 0.75, 29);
        let ds = gen_synthetic(&cfg);
        let ds_v = crate::testutil::with_posterior_covariate(&ds, &cfg);
        let model = crate::testutil::oracle_wired_model();
        let qcfg = CfQueryConfig { mc_samples: 100 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ate = model_ate(&model, &ds_v, &qcfg, &mut rng).unwrap();
        assert!(ate.abs_err < 0.01, "oracle-wired model missed the ATE by {}", ate.abs_err);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pehe = model_pehe(&model, &ds_v, &qcfg, &mut rng).unwrap();
        assert!(pehe.pehe < 0.01, "oracle-wired model PEHE was {}", pehe.pehe);
    }

    #[test]
    fn metrics_are_deterministic_given_the_seed() {
        let ds = gen_synthetic(&SyntheticConfig::new(200, 0.7, 5));
        let model = CevaeModel::new(
            ArchConfig { x_dim: 1, x_binary_mask: vec![false], z_dim: 2, hidden_layers: 1, hidden_units: 8, y_is_binary: true },
            9,
        );
        let cfg = CfQueryConfig { mc_samples: 16 };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model_ate(&model, &ds, &cfg, &mut rng).unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4).ate_pred, run(5).ate_pred);
    }

    #[test]
    fn missing_oracle_is_reported() {
        let mut ds = gen_synthetic(&SyntheticConfig::new(50, 0.75, 1));
        ds.oracle = None;
        let model = zeroed_model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            model_ate(&model, &ds, &CfQueryConfig { mc_samples: 1 }, &mut rng),
            Err(EvalError::MissingOracle)
        ));
        assert!(matches!(oracle_ipw_ate(&ds), Err(EvalError::MissingPropensity)));
    }

    #[test]
    fn pehe_formula_basics() {
        let truth = [0.3, -0.2, 0.7, 0.1];
        assert_eq!(pehe_from_ite(&truth, &truth).pehe, 0.0);
        let offset: Vec<f64> = truth.iter().map(|v| v + 0.5).collect();
        assert_abs_diff_eq!(pehe_from_ite(&offset, &truth).pehe, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn balanced_randomization_reduces_ipw_to_difference_in_means() {
        // equal-size arms and e = 0.5 exactly
        let n = 8;
        let x = Tensor::zeros(n, 1);
        let t = Tensor::from_fn(n, 1, |i, _| (i % 2) as f64);
        let y = Tensor::column(&[0.3, 0.9, 0.1, 0.7, 0.4, 0.2, 0.8, 0.6]);
        let ds = Dataset::new(x, t, y, YType::Continuous, vec![false], None, None);
        let e = vec![0.5; n];
        let ipw = ipw_ate(&ds, &e, PropensitySource::Oracle).unwrap();
        let naive = diff_in_means(&ds).unwrap();
        assert_eq!(ipw.ate_hat, naive);
    }

    #[test]
    fn four_point_world_matches_exhaustive_enumeration() {
        // two covariate values with known propensities and potential
        // outcomes; the empirical distribution encodes the exact joint:
        //   p(x=a) = 1/2, e(a) = 1/4, y(1,a) = 1.0, y(0,a) = 0.0
        //   p(x=b) = 1/2, e(b) = 3/4, y(1,b) = 0.5, y(0,b) = 0.25
        // so 16 rows hold 2, 6, 6, 2 copies of the four (x,t) cells
        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
        for _ in 0..2 {
            rows.push((0.0, 1.0, 1.0, 0.25));
        }
        for _ in 0..6 {
            rows.push((0.0, 0.0, 0.0, 0.25));
        }
        for _ in 0..6 {
            rows.push((1.0, 1.0, 0.5, 0.75));
        }
        for _ in 0..2 {
            rows.push((1.0, 0.0, 0.25, 0.75));
        }
        let n = rows.len();
        let x = Tensor::from_fn(n, 1, |i, _| rows[i].0);
        let t = Tensor::from_fn(n, 1, |i, _| rows[i].1);
        let y = Tensor::from_fn(n, 1, |i, _| rows[i].2);
        let e: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let ds = Dataset::new(x, t, y, YType::Continuous, vec![true], None, None);

        let ipw = ipw_ate(&ds, &e, PropensitySource::Oracle).unwrap();
        // E[Y(1)] = 0.5*1.0 + 0.5*0.5, E[Y(0)] = 0.5*0.0 + 0.5*0.25
        assert_abs_diff_eq!(ipw.mu1_hat, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(ipw.mu0_hat, 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(ipw.ate_hat, 0.625, epsilon = 1e-12);
    }

    #[test]
    fn oracle_propensity_ipw_recovers_the_synthetic_ate() {
        let ds = gen_synthetic(&SyntheticConfig::new(100_000, 0.75, 101));
        let ipw = oracle_ipw_ate(&ds).unwrap();
        assert_abs_diff_eq!(ipw.ate_hat, synthetic_true_ate(), epsilon = 0.02);
        assert_eq!(ipw.source, PropensitySource::Oracle);
    }

    #[test]
    fn ipw_beats_the_naive_estimate_under_strong_confounding() {
        let ds = gen_synthetic(&SyntheticConfig::new(100_000, 0.9, 57));
        let truth = synthetic_true_ate();
        let ipw_err = (oracle_ipw_ate(&ds).unwrap().ate_hat - truth).abs();
        let naive_err = (diff_in_means(&ds).unwrap() - truth).abs();
        assert!(
            ipw_err < naive_err,
            "IPW error {ipw_err} should beat the confounded naive error {naive_err}"
        );
    }

    #[test]
    fn ipw_validation_errors() {
        let ds = gen_synthetic(&SyntheticConfig::new(10, 0.75, 2));
        let short = vec![0.5; 4];
        assert!(matches!(
            ipw_ate(&ds, &short, PropensitySource::Estimated),
            Err(EvalError::LengthMismatch { expected: 10, found: 4 })
        ));
        let mut bad = vec![0.5; 10];
        bad[3] = 1.0;
        assert!(matches!(
            ipw_ate(&ds, &bad, PropensitySource::Estimated),
            Err(EvalError::PropensityOutOfRange { index: 3, value: v }) if v == 1.0
        ));
        bad[3] = 0.0;
        assert!(matches!(
            ipw_ate(&ds, &bad, PropensitySource::Estimated),
            Err(EvalError::PropensityOutOfRange { index: 3, value: v }) if v == 0.0
        ));

        let x = Tensor::zeros(3, 1);
        let t = Tensor::zeros(3, 1);
        let y = Tensor::column(&[0.0, 1.0, 0.0]);
        let all_control = Dataset::new(x, t, y, YType::Binary, vec![false], None, None);
        assert!(matches!(
            diff_in_means(&all_control),
            Err(EvalError::EmptyArm { treated: 0, control: 3 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pehe_dominates_the_absolute_mean_error(
            pairs in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..40)
        ) {
            let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let pehe = pehe_from_ite(&pred, &truth).pehe;
            let mean_err = (pred.iter().sum::<f64>() - truth.iter().sum::<f64>()).abs() / pred.len() as f64;
            prop_assert!(pehe >= mean_err - 1e-12);
        }
    }
}
