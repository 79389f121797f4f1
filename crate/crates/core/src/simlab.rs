//! Synthetic cohorts under known Cox models, and Monte Carlo estimates of
//! the rejection rate of the exposure comparison test.
//!
//! Each replicate draws `m` exposures `A1..Am`, equicorrelated standard
//! normals, plus independent standard normal covariates `L1..Lp`. Event
//! times follow a Weibull proportional hazards model with linear predictor
//! `Σ true_beta[j]·A_j + Σ covariate_effects[l]·L_l`; giving the second
//! exposure a zero coefficient makes `A1` the only true predictor. Censoring
//! times are Weibull with the same shape and a scale calibrated so that the
//! expected censored fraction equals `censoring_rate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CohortRow, Dataset, Schema};
use crate::design::ExposureSpec;
use crate::inference::{compare_exposures, normal_critical_value, CompareOptions};
use crate::special::chi_square_sf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation config: {0}")]
    Config(String),
    #[error("scenario does not satisfy the null hypothesis: {0}")]
    NotNull(String),
}

fn default_one() -> f64 {
    1.0
}

fn default_strata() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub exposure_correlation: f64,
    /// One coefficient per exposure; its length sets the number of exposures.
    pub true_beta: Vec<f64>,
    #[serde(default)]
    pub covariate_effects: Vec<f64>,
    #[serde(default = "default_one")]
    pub weibull_shape: f64,
    #[serde(default = "default_one")]
    pub weibull_scale: f64,
    pub censoring_rate: f64,
    #[serde(default = "default_strata")]
    pub n_strata: usize,
    pub replicate_count: usize,
    pub master_seed: u64,
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let m = self.true_beta.len();
        if self.n_subjects < 2 {
            return bad(format!("n_subjects must be at least 2, found {}", self.n_subjects));
        }
        if m < 2 {
            return bad(format!("true_beta needs one entry per exposure (at least 2), found {m}"));
        }
        let rho = self.exposure_correlation;
        if !(-1.0..=1.0).contains(&rho) {
            return bad(format!("exposure_correlation must be in [-1, 1], found {rho}"));
        }
        if m > 2 && rho < 0.0 {
            return bad("negative exposure_correlation is only supported for two exposures".to_owned());
        }
        if !(self.weibull_shape > 0.0 && self.weibull_shape.is_finite()) {
            return bad(format!("weibull_shape must be positive, found {}", self.weibull_shape));
        }
        if !(self.weibull_scale > 0.0 && self.weibull_scale.is_finite()) {
            return bad(format!("weibull_scale must be positive, found {}", self.weibull_scale));
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return bad(format!("censoring_rate must be in [0, 1), found {}", self.censoring_rate));
        }
        if self.n_strata == 0 {
            return bad("n_strata must be at least 1".to_owned());
        }
        if self.replicate_count == 0 {
            return bad("replicate_count must be at least 1".to_owned());
        }
        if self.true_beta.iter().chain(&self.covariate_effects).any(|b| !b.is_finite()) {
            return bad("coefficients must be finite".to_owned());
        }
        Ok(())
    }

    pub fn n_exposures(&self) -> usize {
        self.true_beta.len()
    }

    pub fn exposure_names(&self) -> Vec<String> {
        (1..=self.n_exposures()).map(|j| format!("A{j}")).collect()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            id_column: "id".to_owned(),
            entry_column: None,
            exit_column: "time".to_owned(),
            event_column: "event".to_owned(),
            exposure_columns: self.exposure_names(),
            covariate_columns: (1..=self.covariate_effects.len()).map(|l| format!("L{l}")).collect(),
            strata_columns: vec!["stratum".to_owned()],
        }
    }

    /// Continuous comparison of all simulated exposures, adjusted for every
    /// simulated covariate.
    pub fn exposure_spec(&self) -> ExposureSpec {
        let names = self.exposure_names();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        ExposureSpec::continuous(&refs)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one replicate; depends only on the master seed and the index.
pub fn replicate_seed(master_seed: u64, replicate_index: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(replicate_index as u64))
}

/// Scale factor `θ` solving `mean_i 1 / (1 + θ exp(η_i)) = rate`, i.e. the
/// censoring hazard relative to the baseline.
fn censoring_factor(eta: &[f64], rate: f64) -> f64 {
    let frac = |log_theta: f64| {
        eta.iter().map(|&e| 1.0 / (1.0 + (log_theta + e).exp())).sum::<f64>() / eta.len() as f64
    };
    // frac decreases from 1 to 0 in log θ
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // θ multiplies exp(η) in the event-versus-censoring odds; the censoring
    // hazard is the baseline hazard divided by θ.
    (0.5 * (lo + hi)).exp()
}

/// Draws one synthetic cohort. The same `(config, replicate_index)` always
/// yields the same dataset.
pub fn simulate_cohort(config: &SimConfig, replicate_index: usize) -> Result<Dataset, SimError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(config.master_seed, replicate_index));
    let n = config.n_subjects;
    let m = config.n_exposures();
    let p = config.covariate_effects.len();
    let rho = config.exposure_correlation;
    let k = config.weibull_shape;
    let s = config.weibull_scale;

    let mut exposures = Vec::with_capacity(n);
    let mut covariates = Vec::with_capacity(n);
    let mut strata = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    for _ in 0..n {
        let a: Vec<f64> = if m == 2 {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            vec![z1, rho * z1 + (1.0 - rho * rho).sqrt() * z2]
        } else {
            let z0: f64 = rng.sample(StandardNormal);
            (0..m)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    rho.sqrt() * z0 + (1.0 - rho).sqrt() * z
                })
                .collect()
        };
        let l: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let lp = config.true_beta.iter().zip(&a).map(|(b, x)| b * x).sum::<f64>()
            + config.covariate_effects.iter().zip(&l).map(|(g, x)| g * x).sum::<f64>();
        strata.push(rng.random_range(0..config.n_strata));
        exposures.push(a);
        covariates.push(l);
        eta.push(lp);
    }

    // Same-shape Weibull censoring: P(C < T | η) = 1 / (1 + θ exp(η)) with
    // θ = (scale_c / scale)^shape.
    let censor_scale = if config.censoring_rate > 0.0 {
        Some(s * censoring_factor(&eta, config.censoring_rate).powf(1.0 / k))
    } else {
        None
    };

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let e: f64 = rng.sample(Exp1);
        let t = s * (e * (-eta[i]).exp()).powf(1.0 / k);
        let (time, event) = match censor_scale {
            Some(cs) => {
                let ec: f64 = rng.sample(Exp1);
                let c = cs * ec.powf(1.0 / k);
                if c < t {
                    (c, false)
                } else {
                    (t, true)
                }
            }
            None => (t, true),
        };
        rows.push(CohortRow {
            subject_id: (i + 1).to_string(),
            entry_time: 0.0,
            exit_time: time.max(f64::MIN_POSITIVE),
            event,
            exposures: std::mem::take(&mut exposures[i]),
            covariates: std::mem::take(&mut covariates[i]),
            strata: vec![format!("s{}", strata[i] + 1)],
        });
    }
    Dataset::new(config.schema(), rows).map_err(|e| SimError::Config(e.to_string()))
}

/// What one replicate produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    /// `None` when the fit failed or did not converge.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Two-exposure difference z-test that ignores the covariance between
    /// the two estimates.
    pub naive_p_value: Option<f64>,
    /// Whether all per-exposure confidence intervals share a common point.
    pub intervals_overlap: Option<bool>,
    pub coefficients: Vec<f64>,
    pub failure: Option<String>,
}

impl ReplicateOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Fits one replicate.
pub fn run_replicate(config: &SimConfig, options: &CompareOptions, replicate_index: usize) -> ReplicateOutcome {
    let mut outcome = ReplicateOutcome {
        index: replicate_index,
        statistic: None,
        p_value: None,
        naive_p_value: None,
        intervals_overlap: None,
        coefficients: Vec::new(),
        failure: None,
    };
    let dataset = match simulate_cohort(config, replicate_index) {
        Ok(d) => d,
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    let report = match compare_exposures(&dataset, &config.exposure_spec(), options) {
        Ok(r) => r,
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    if !report.diagnostics.converged {
        outcome.failure = Some(report.diagnostics.message.unwrap_or_else(|| "did not converge".to_owned()));
        return outcome;
    }
    let est: Vec<_> = report.exposures.iter().map(|e| &e.estimates[0]).collect();
    outcome.coefficients = est.iter().map(|t| t.coefficient).collect();
    outcome.statistic = Some(report.difference_test.statistic);
    outcome.p_value = Some(report.difference_test.p_value);
    let lower = est.iter().map(|t| t.hazard_ratio.lower).fold(f64::NEG_INFINITY, f64::max);
    let upper = est.iter().map(|t| t.hazard_ratio.upper).fold(f64::INFINITY, f64::min);
    outcome.intervals_overlap = Some(lower <= upper);
    if est.len() == 2 {
        let v = est[0].std_error.powi(2) + est[1].std_error.powi(2);
        let z2 = (est[1].coefficient - est[0].coefficient).powi(2) / v;
        outcome.naive_p_value = Some(if v > 0.0 { chi_square_sf(z2, 1) } else { f64::NAN });
    }
    outcome
}

/// Runs every replicate of a scenario in parallel. Outcomes are returned in
/// replicate order, independent of scheduling.
pub fn run_scenario(config: &SimConfig, options: &CompareOptions) -> Result<Vec<ReplicateOutcome>, SimError> {
    config.check()?;
    Ok((0..config.replicate_count)
        .into_par_iter()
        .map(|i| run_replicate(config, options, i))
        .collect())
}

/// Share of failed replicates at or above which a scenario is invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionEstimate {
    pub alpha: f64,
    pub replicates: usize,
    pub failures: usize,
    /// False when failures reach [`MAX_FAILURE_FRACTION`] of the replicates.
    pub valid: bool,
    pub rejections: usize,
    /// Rejections over successful replicates.
    pub rate: f64,
    /// 95% Wilson interval for the rate.
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub monte_carlo_se: f64,
    pub naive_rate: Option<f64>,
    /// Fraction of successful replicates with overlapping per-exposure
    /// confidence intervals.
    pub overlap_fraction: f64,
    /// Kolmogorov–Smirnov distance of the p-values from uniform.
    pub ks_statistic: f64,
}

impl RejectionEstimate {
    /// The KS statistic is below the asymptotic 1% critical value.
    pub fn p_values_look_uniform(&self) -> bool {
        self.ks_statistic < ks_critical_value_1pct(self.replicates - self.failures)
    }
}

/// One-sample KS distance of a sample from the uniform distribution on [0, 1].
pub fn ks_statistic(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let x = x.clamp(0.0, 1.0);
        d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
    })
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_value_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

fn wilson(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Aggregates replicate outcomes. A replicate rejects when `p ≤ alpha`.
pub fn summarize(outcomes: &[ReplicateOutcome], alpha: f64) -> RejectionEstimate {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| !o.failed()).collect();
    let failures = outcomes.len() - ok.len();
    let n = ok.len();
    let p_values: Vec<f64> = ok.iter().filter_map(|o| o.p_value).collect();
    let rejections = p_values.iter().filter(|&&p| p <= alpha).count();
    let rate = if n > 0 { rejections as f64 / n as f64 } else { f64::NAN };
    let (ci_lower, ci_upper) = wilson(rejections, n, normal_critical_value(0.95));
    let naive: Vec<f64> = ok.iter().filter_map(|o| o.naive_p_value).filter(|p| !p.is_nan()).collect();
    let naive_rate = (!naive.is_empty()).then(|| naive.iter().filter(|&&p| p <= alpha).count() as f64 / naive.len() as f64);
    let overlap = ok.iter().filter(|o| o.intervals_overlap == Some(true)).count();
    RejectionEstimate {
        alpha,
        replicates: outcomes.len(),
        failures,
        valid: !outcomes.is_empty() && (failures as f64) < MAX_FAILURE_FRACTION * outcomes.len() as f64,
        rejections,
        rate,
        ci_lower,
        ci_upper,
        monte_carlo_se: if n > 0 { (rate * (1.0 - rate) / n as f64).sqrt() } else { f64::NAN },
        naive_rate,
        overlap_fraction: if n > 0 { overlap as f64 / n as f64 } else { f64::NAN },
        ks_statistic: if p_values.is_empty() { f64::NAN } else { ks_statistic(&p_values) },
    }
}

/// Checks that a scenario generates data under the null of equal
/// associations: every exposure carries the same true coefficient, so the
/// exposures are exchangeable (or identical when the correlation is 1).
pub fn check_null(config: &SimConfig) -> Result<(), SimError> {
    let b0 = config.true_beta[0];
    if config.true_beta.iter().any(|&b| b != b0) {
        return Err(SimError::NotNull(format!(
            "true_beta must be equal across exposures, found {:?}",
            config.true_beta
        )));
    }
    Ok(())
}

pub fn estimate_type1_error(config: &SimConfig, options: &CompareOptions, alpha: f64) -> Result<RejectionEstimate, SimError> {
    config.check()?;
    check_null(config)?;
    check_alpha(alpha)?;
    Ok(summarize(&run_scenario(config, options)?, alpha))
}

pub fn estimate_power(config: &SimConfig, options: &CompareOptions, alpha: f64) -> Result<RejectionEstimate, SimError> {
    check_alpha(alpha)?;
    Ok(summarize(&run_scenario(config, options)?, alpha))
}

fn check_alpha(alpha: f64) -> Result<(), SimError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(SimError::Config(format!("alpha must be in (0, 1], found {alpha}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SimConfig {
        SimConfig {
            n_subjects: 200,
            exposure_correlation: 0.5,
            true_beta: vec![0.3, 0.3],
            covariate_effects: vec![0.2],
            weibull_shape: 1.0,
            weibull_scale: 1.0,
            censoring_rate: 0.3,
            n_strata: 2,
            replicate_count: 8,
            master_seed: 11,
        }
    }

    #[test]
    fn replicates_are_reproducible() {
        let c = config();
        let a = simulate_cohort(&c, 3).unwrap();
        let b = simulate_cohort(&c, 3).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), simulate_cohort(&c, 4).unwrap().fingerprint());
    }

    #[test]
    fn censoring_rate_is_calibrated() {
        let mut c = config();
        c.n_subjects = 20_000;
        c.censoring_rate = 0.6;
        let d = simulate_cohort(&c, 0).unwrap();
        let censored = 1.0 - d.event_count() as f64 / d.len() as f64;
        assert!((censored - 0.6).abs() < 0.02, "{censored}");
    }

    #[test]
    fn heavy_censoring_leaves_few_events() {
        let mut c = config();
        c.censoring_rate = 0.999;
        c.n_subjects = 1000;
        assert!(simulate_cohort(&c, 0).unwrap().event_count() < 10);
    }

    #[test]
    fn full_correlation_duplicates_the_exposure() {
        let mut c = config();
        c.exposure_correlation = 1.0;
        let d = simulate_cohort(&c, 0).unwrap();
        assert!(d.rows().iter().all(|r| r.exposures[0] == r.exposures[1]));
    }

    #[test]
    fn doubling_replicates_keeps_the_prefix() {
        let c = config();
        let mut c2 = c.clone();
        c2.replicate_count *= 2;
        let opts = CompareOptions::default();
        let a = run_scenario(&c, &opts).unwrap();
        let b = run_scenario(&c2, &opts).unwrap();
        assert_eq!(a[..], b[..c.replicate_count]);
    }

    #[test]
    fn alpha_one_rejects_everything() {
        let est = estimate_type1_error(&config(), &CompareOptions::default(), 1.0).unwrap();
        assert_eq!(est.rate, 1.0);
    }

    #[test]
    fn null_is_enforced() {
        let mut c = config();
        c.true_beta = vec![0.3, 0.0];
        assert!(matches!(
            estimate_type1_error(&c, &CompareOptions::default(), 0.05),
            Err(SimError::NotNull(_))
        ));
    }

    #[test]
    fn invalid_configs() {
        let mut c = config();
        c.replicate_count = 0;
        assert!(c.check().is_err());
        let mut c = config();
        c.censoring_rate = 1.0;
        assert!(c.check().is_err());
        let mut c = config();
        c.true_beta = vec![0.1];
        assert!(c.check().is_err());
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!((ks_statistic(&v) - 0.0005).abs() < 1e-12);
        assert!((ks_statistic(&[0.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_brackets_the_rate() {
        let (lo, hi) = wilson(100, 2000, 1.96);
        assert!(lo < 0.05 && hi > 0.05);
    }
}
