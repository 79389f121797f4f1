//! Wald tests and hazard ratios from a [`CoxFit`], and the end-to-end
//! exposure comparison built on them.

mod compare;
mod report;

use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cox::CoxFit;
use crate::linalg::{condition_number, Cholesky};
use crate::special::chi_square_sf;

pub use compare::{compare_exposures, CompareError, CompareOptions, ComparisonReport, ExposureResult, RunMetadata, TermEstimate};
pub use report::{format_p_value, render_table};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("coefficient `{0}` is not in the model")]
    UnknownCoefficient(String),
    #[error("coefficient `{0}` is aliased; refusing to test a reduced hypothesis")]
    AliasedTestCoefficient(String),
    #[error("empty test set")]
    EmptyTest,
    #[error("covariance of the tested coefficients is singular (condition number {condition_number:.3e})")]
    SingularCovariance { condition_number: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Cluster sandwich estimate.
    #[default]
    Robust,
    /// Inverse observed information.
    Model,
}

impl CovarianceKind {
    fn matrix(self, fit: &CoxFit) -> &Array2<f64> {
        match self {
            CovarianceKind::Robust => &fit.robust_covariance,
            CovarianceKind::Model => &fit.model_covariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    /// Wald statistic `Q`.
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub tested_coefficients: Vec<String>,
    pub covariance_used: CovarianceKind,
}

/// Coefficients and covariances restricted to the non-aliased terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrunedFit {
    pub names: Vec<String>,
    pub coefficients: Array1<f64>,
    pub robust_covariance: Array2<f64>,
    pub model_covariance: Array2<f64>,
}

/// Drops aliased coefficients together with their covariance rows and columns.
pub fn prune_aliased(fit: &CoxFit) -> PrunedFit {
    let keep = fit.active();
    let block = |m: &Array2<f64>| {
        Array2::from_shape_fn((keep.len(), keep.len()), |(a, b)| m[[keep[a], keep[b]]])
    };
    PrunedFit {
        names: keep.iter().map(|&j| fit.column_names[j].clone()).collect(),
        coefficients: keep.iter().map(|&j| fit.coefficients[j]).collect(),
        robust_covariance: block(&fit.robust_covariance),
        model_covariance: block(&fit.model_covariance),
    }
}

fn resolve<S: AsRef<str>>(fit: &CoxFit, names: &[S]) -> Result<Vec<usize>, InferenceError> {
    names
        .iter()
        .map(|name| {
            let name = name.as_ref();
            let j = fit
                .index(name)
                .ok_or_else(|| InferenceError::UnknownCoefficient(name.to_owned()))?;
            if fit.aliased[j] {
                return Err(InferenceError::AliasedTestCoefficient(name.to_owned()));
            }
            Ok(j)
        })
        .collect()
}

/// `Q = bᵀ V⁻¹ b` for an estimate vector and its covariance.
pub fn wald_statistic(estimates: &Array1<f64>, covariance: &Array2<f64>) -> Result<f64, InferenceError> {
    let k = estimates.len();
    if k == 0 {
        return Err(InferenceError::EmptyTest);
    }
    if covariance.nrows() != k || covariance.ncols() != k {
        return Err(InferenceError::Argument(format!(
            "covariance is {}x{}, expected {k}x{k}",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    if k == 1 {
        let v = covariance[[0, 0]];
        if !(v > 0.0) {
            return Err(InferenceError::SingularCovariance {
                condition_number: f64::INFINITY,
            });
        }
        return Ok(estimates[0] * estimates[0] / v);
    }
    let chol = Cholesky::new(covariance, 1e-12);
    if !chol.is_full_rank() {
        return Err(InferenceError::SingularCovariance {
            condition_number: condition_number(covariance),
        });
    }
    Ok(estimates.dot(&chol.solve(estimates)))
}

/// Variance, relative to the largest variance in the fit, below which a
/// coefficient is numerically fixed (e.g. the interaction between two
/// identical exposures).
const DEGENERATE_VARIANCE: f64 = 1e-14;
/// A fixed coefficient no larger than this counts as exactly zero.
const DEGENERATE_ESTIMATE: f64 = 1e-8;

/// Joint Wald test that every named coefficient is zero:
/// `Q = (Cb)ᵀ (C V Cᵀ)⁻¹ (Cb)` with `C` selecting the named terms, referred to
/// chi-square with `df = names.len()`.
///
/// Coefficients whose variance is numerically zero are fixed rather than
/// estimated: they add nothing to `Q` when they are zero to rounding and make
/// `Q` infinite otherwise.
pub fn wald_multivariate<S: AsRef<str>>(
    fit: &CoxFit,
    names: &[S],
    covariance: CovarianceKind,
) -> Result<TestResult, InferenceError> {
    if names.is_empty() {
        return Err(InferenceError::EmptyTest);
    }
    let all = resolve(fit, names)?;
    let v = covariance.matrix(fit);
    let scale = fit.active().iter().map(|&j| v[[j, j]]).fold(0.0f64, f64::max);
    let (fixed, idx): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&j| v[[j, j]] <= DEGENERATE_VARIANCE * scale);
    let statistic = if fixed.iter().any(|&j| fit.coefficients[j].abs() > DEGENERATE_ESTIMATE) {
        f64::INFINITY
    } else if idx.is_empty() {
        0.0
    } else {
        let b: Array1<f64> = idx.iter().map(|&j| fit.coefficients[j]).collect();
        let block = Array2::from_shape_fn((idx.len(), idx.len()), |(a, c)| v[[idx[a], idx[c]]]);
        wald_statistic(&b, &block)?
    };
    Ok(TestResult {
        statistic,
        df: all.len(),
        p_value: chi_square_sf(statistic, all.len()),
        tested_coefficients: names.iter().map(|n| n.as_ref().to_owned()).collect(),
        covariance_used: covariance,
    })
}

/// Single-coefficient Wald test, `Q = b² / V[b, b]` on one degree of freedom.
pub fn wald_univariate(fit: &CoxFit, name: &str, covariance: CovarianceKind) -> Result<TestResult, InferenceError> {
    wald_multivariate(fit, &[name], covariance)
}

/// Hazard ratio with a symmetric Wald interval on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HazardRatio {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl fmt::Display for HazardRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} [{:.2}, {:.2}]", self.estimate, self.lower, self.upper)
    }
}

/// Two-sided standard normal quantile for a confidence level, found by
/// inverting the one-degree-of-freedom chi-square tail.
pub fn normal_critical_value(confidence: f64) -> f64 {
    assert!(confidence > 0.0 && confidence < 1.0, "confidence must be in (0, 1)");
    let alpha = 1.0 - confidence;
    // bracket on q = z²
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while chi_square_sf(hi, 1) > alpha {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_square_sf(mid, 1) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    (0.5 * (lo + hi)).sqrt()
}

/// Hazard ratio for `scale` units of a linear combination `Σ w_j b_j` of
/// coefficients, with variance `wᵀ V w`.
pub fn combination_hazard_ratio(
    fit: &CoxFit,
    terms: &[(&str, f64)],
    scale: f64,
    confidence: f64,
    covariance: CovarianceKind,
) -> Result<(HazardRatio, f64, f64), InferenceError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(InferenceError::Argument(format!("scale must be positive, found {scale}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(InferenceError::Argument(format!("confidence must be in (0, 1), found {confidence}")));
    }
    let names: Vec<&str> = terms.iter().map(|t| t.0).collect();
    let idx = resolve(fit, &names)?;
    let v = covariance.matrix(fit);
    let mut estimate = 0.0;
    let mut variance = 0.0;
    for (a, &(_, wa)) in terms.iter().enumerate() {
        estimate += wa * fit.coefficients[idx[a]];
        for (c, &(_, wc)) in terms.iter().enumerate() {
            variance += wa * wc * v[[idx[a], idx[c]]];
        }
    }
    let se = variance.max(0.0).sqrt();
    let z = normal_critical_value(confidence);
    let log_hr = scale * estimate;
    let half = z * scale * se;
    Ok((
        HazardRatio {
            estimate: log_hr.exp(),
            lower: (log_hr - half).exp(),
            upper: (log_hr + half).exp(),
        },
        estimate,
        se,
    ))
}

/// `exp(scale · b)` with interval `exp(scale · (b ± z · se))`.
pub fn hazard_ratio(
    fit: &CoxFit,
    name: &str,
    scale: f64,
    confidence: f64,
    covariance: CovarianceKind,
) -> Result<HazardRatio, InferenceError> {
    combination_hazard_ratio(fit, &[(name, 1.0)], scale, confidence, covariance).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cox::{FitDiagnostics, TieMethod};
    use ndarray::array;

    pub(crate) fn synthetic_fit(names: &[&str], beta: Array1<f64>, cov: Array2<f64>) -> CoxFit {
        assert_eq!(names.len(), beta.len());
        CoxFit {
            column_names: names.iter().map(|s| (*s).to_owned()).collect(),
            aliased: beta.iter().map(|b| b.is_nan()).collect(),
            coefficients: beta,
            model_covariance: cov.clone(),
            robust_covariance: cov,
            log_partial_likelihood: 0.0,
            iterations: 1,
            converged: true,
            tie_method: TieMethod::Efron,
            diagnostics: FitDiagnostics {
                score_max_norm: 0.0,
                step_halvings: 0,
                skipped_strata: 0,
                probable_separation: false,
                initial_log_likelihood: 0.0,
                message: None,
            },
        }
    }

    #[test]
    fn null_point_gives_unit_p() {
        let fit = synthetic_fit(&["a", "b"], array![0.0, 0.0], Array2::eye(2));
        let t = wald_multivariate(&fit, &["a", "b"], CovarianceKind::Robust).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.df, 2);
    }

    #[test]
    fn unit_vector_identity_covariance() {
        let fit = synthetic_fit(&["a", "b", "c"], array![1.0, 1.0, 0.3], Array2::eye(3));
        let t = wald_multivariate(&fit, &["a", "b"], CovarianceKind::Robust).unwrap();
        assert_eq!(t.statistic, 2.0);
        assert!((t.p_value - (-1f64).exp()).abs() < 1e-12);
        assert!((t.p_value - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn univariate_and_singleton_agree_exactly() {
        let cov = array![[0.04, 0.01], [0.01, 0.09]];
        let fit = synthetic_fit(&["a", "b"], array![0.37, -0.2], cov);
        let u = wald_univariate(&fit, "a", CovarianceKind::Robust).unwrap();
        let m = wald_multivariate(&fit, &["a"], CovarianceKind::Robust).unwrap();
        assert_eq!(u, m);
        assert_eq!(u.statistic, 0.37 * 0.37 / 0.04);
    }

    #[test]
    fn one_point_nine_six_se_gives_five_percent() {
        let se = 0.2;
        let fit = synthetic_fit(&["a"], array![1.96 * se], array![[se * se]]);
        let t = wald_univariate(&fit, "a", CovarianceKind::Robust).unwrap();
        assert!((t.p_value - 0.05).abs() < 1e-3);
    }

    #[test]
    fn zero_coefficient_univariate() {
        let fit = synthetic_fit(&["a"], array![0.0], array![[0.5]]);
        let t = wald_univariate(&fit, "a", CovarianceKind::Model).unwrap();
        assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
        assert_eq!(t.covariance_used, CovarianceKind::Model);
    }

    #[test]
    fn aliased_test_coefficient_is_refused() {
        let mut cov = Array2::eye(2);
        cov[[1, 1]] = 0.0;
        let fit = synthetic_fit(&["a", "b"], array![0.5, f64::NAN], cov);
        assert_eq!(
            wald_multivariate(&fit, &["a", "b"], CovarianceKind::Robust),
            Err(InferenceError::AliasedTestCoefficient("b".into()))
        );
        assert_eq!(
            wald_univariate(&fit, "zz", CovarianceKind::Robust),
            Err(InferenceError::UnknownCoefficient("zz".into()))
        );
    }

    #[test]
    fn rounding_level_contrast_is_exact_null() {
        let cov = array![[0.04, 1e-20], [1e-20, 1e-30]];
        let fit = synthetic_fit(&["a", "a:A_type2"], array![0.37, 3e-15], cov);
        let t = wald_univariate(&fit, "a:A_type2", CovarianceKind::Robust).unwrap();
        assert_eq!((t.statistic, t.p_value, t.df), (0.0, 1.0, 1));
        let fit = synthetic_fit(&["a", "a:A_type2"], array![0.37, 0.2], array![[0.04, 0.0], [0.0, 1e-30]]);
        let t = wald_univariate(&fit, "a:A_type2", CovarianceKind::Robust).unwrap();
        assert_eq!((t.statistic, t.p_value), (f64::INFINITY, 0.0));
    }

    #[test]
    fn singular_block_is_reported() {
        let cov = array![[1.0, 1.0], [1.0, 1.0]];
        let fit = synthetic_fit(&["a", "b"], array![0.5, 0.2], cov);
        assert!(matches!(
            wald_multivariate(&fit, &["a", "b"], CovarianceKind::Robust),
            Err(InferenceError::SingularCovariance { .. })
        ));
    }

    #[test]
    fn pruning_without_aliasing_is_identity() {
        let cov = array![[0.04, 0.01], [0.01, 0.09]];
        let fit = synthetic_fit(&["a", "b"], array![0.37, -0.2], cov.clone());
        let pruned = prune_aliased(&fit);
        assert_eq!(pruned.names, vec!["a", "b"]);
        assert_eq!(pruned.coefficients, fit.coefficients);
        assert_eq!(pruned.robust_covariance, cov);
    }

    #[test]
    fn pruning_drops_aliased_row_and_column() {
        let cov = array![[0.04, 0.0, 0.01], [0.0, 0.0, 0.0], [0.01, 0.0, 0.09]];
        let fit = synthetic_fit(&["a", "L1:A_type2", "c"], array![0.37, f64::NAN, -0.2], cov);
        let pruned = prune_aliased(&fit);
        assert_eq!(pruned.names, vec!["a", "c"]);
        assert_eq!(pruned.robust_covariance, array![[0.04, 0.01], [0.01, 0.09]]);
    }

    #[test]
    fn critical_value_for_95_percent() {
        assert!((normal_critical_value(0.95) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_critical_value(0.99) - 2.575_829_303_548_901).abs() < 1e-12);
    }

    #[test]
    fn null_coefficient_hazard_ratio() {
        let fit = synthetic_fit(&["a"], array![0.0], array![[0.01]]);
        let hr = hazard_ratio(&fit, "a", 3.5, 0.95, CovarianceKind::Robust).unwrap();
        assert_eq!(hr.estimate, 1.0);
        assert!(hr.lower < 1.0 && hr.upper > 1.0);
    }

    #[test]
    fn doubling_scale_squares_hazard_ratio() {
        let fit = synthetic_fit(&["a"], array![-0.18], array![[0.0004]]);
        let one = hazard_ratio(&fit, "a", 1.3, 0.95, CovarianceKind::Robust).unwrap();
        let two = hazard_ratio(&fit, "a", 2.6, 0.95, CovarianceKind::Robust).unwrap();
        assert!((two.estimate - one.estimate.powi(2)).abs() <= 1e-15 * two.estimate);
    }

    #[test]
    fn renders_in_table_style() {
        let hr = HazardRatio {
            estimate: 0.83,
            lower: 0.79,
            upper: 0.87,
        };
        assert_eq!(hr.to_string(), "0.83 [0.79, 0.87]");
    }

    #[test]
    fn rejects_bad_scale() {
        let fit = synthetic_fit(&["a"], array![0.1], array![[0.01]]);
        assert!(hazard_ratio(&fit, "a", 0.0, 0.95, CovarianceKind::Robust).is_err());
        assert!(hazard_ratio(&fit, "a", 1.0, 1.0, CovarianceKind::Robust).is_err());
    }
}
