use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{combination_hazard_ratio, wald_multivariate, CovarianceKind, HazardRatio, InferenceError, TestResult};
use crate::cox::{self, CoxError, CoxFit, FitOptions};
use crate::data::Dataset;
use crate::design::{build_design_matrix, duplicate_augment, interaction_name, DesignError, ExposureKind, ExposureSpec, EXPOSURE_TERM, TYPE_TERM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("design stage: {0}")]
    Design(#[from] DesignError),
    #[error("fit stage: {0}")]
    Fit(#[from] CoxError),
    #[error("inference stage: {0}")]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareOptions {
    pub fit: FitOptions,
    pub confidence: f64,
    /// Covariance used for difference tests and intervals.
    pub covariance: CovarianceKind,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            confidence: 0.95,
            covariance: CovarianceKind::Robust,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermEstimate {
    pub term: String,
    /// Category the term contrasts against the reference, for categorical kinds.
    pub level: Option<usize>,
    /// Per-unit log hazard ratio for this exposure (main plus interaction).
    pub coefficient: f64,
    pub std_error: f64,
    /// Exposure units per reported hazard ratio.
    pub increment: f64,
    pub hazard_ratio: HazardRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureResult {
    pub column: String,
    pub a_type: String,
    pub estimates: Vec<TermEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    /// NaN (serialized as null) when aliased.
    pub coefficient: f64,
    pub robust_se: f64,
    pub model_se: f64,
    pub aliased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub log_partial_likelihood: f64,
    pub score_max_norm: f64,
    pub probable_separation: bool,
    pub skipped_strata: usize,
    pub aliased: Vec<String>,
    pub message: Option<String>,
    pub warnings: Vec<String>,
    pub original_rows: usize,
    pub augmented_rows: usize,
    pub events: usize,
    pub dropped_incomplete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub dataset_fingerprint: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub options: CompareOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub kind: ExposureKind,
    pub n_levels: Option<usize>,
    pub reference_level: Option<usize>,
    pub exposures: Vec<ExposureResult>,
    /// Joint test that every exposure-by-type interaction is zero.
    pub difference_test: TestResult,
    /// With three or more exposures: each non-reference type against the
    /// reference type.
    pub type_tests: Vec<TestResult>,
    pub coefficients: Vec<CoefficientRow>,
    pub diagnostics: ReportDiagnostics,
    pub metadata: RunMetadata,
}

impl ComparisonReport {
    pub fn exposure(&self, column: &str) -> Option<&ExposureResult> {
        self.exposures.iter().find(|e| e.column == column)
    }

    /// Pretty JSON. Aliased (NaN) values serialize as `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn coefficient_rows(fit: &CoxFit) -> Vec<CoefficientRow> {
    fit.column_names
        .iter()
        .enumerate()
        .map(|(j, name)| CoefficientRow {
            name: name.clone(),
            coefficient: fit.coefficients[j],
            robust_se: fit.robust_covariance[[j, j]].sqrt(),
            model_se: fit.model_covariance[[j, j]].sqrt(),
            aliased: fit.aliased[j],
        })
        .collect()
}

/// Runs the whole duplication-method comparison: augment, build the
/// interaction design, fit the stratified Cox model with clustered robust
/// covariance, test the exposure-by-type interactions, and report
/// per-exposure hazard ratios.
///
/// A fit that fails to converge still yields a report; check
/// `diagnostics.converged`.
pub fn compare_exposures(
    dataset: &Dataset,
    spec: &ExposureSpec,
    options: &CompareOptions,
) -> Result<ComparisonReport, CompareError> {
    let aug = duplicate_augment(dataset, spec)?;
    let design = build_design_matrix(&aug, spec)?;
    let fit = cox::fit(&design, &options.fit)?;
    report_from_fit(dataset, spec, options, &aug, &design, &fit)
}

fn report_from_fit(
    dataset: &Dataset,
    spec: &ExposureSpec,
    options: &CompareOptions,
    aug: &crate::design::AugmentedDataset,
    design: &crate::design::DesignMatrix,
    fit: &CoxFit,
) -> Result<ComparisonReport, CompareError> {
    let cov = options.covariance;
    let difference_test = wald_multivariate(fit, &design.interaction_columns, cov)?;

    let m = aug.copies();
    let mut type_tests = Vec::new();
    if m > 2 {
        for j in 1..m {
            let names: Vec<String> = aug.term_names.iter().map(|t| interaction_name(t, j)).collect();
            type_tests.push(wald_multivariate(fit, &names, cov)?);
        }
    }

    let mut exposures = Vec::with_capacity(m);
    for (j, summary) in aug.exposures.iter().enumerate() {
        let increment = if spec.kind == ExposureKind::Categorical { 1.0 } else { summary.increment };
        let mut estimates = Vec::new();
        for term in &aug.term_names {
            let inter = interaction_name(term, j);
            let terms: Vec<(&str, f64)> = if j == 0 {
                vec![(term.as_str(), 1.0)]
            } else {
                vec![(term.as_str(), 1.0), (inter.as_str(), 1.0)]
            };
            let (hazard_ratio, coefficient, std_error) =
                combination_hazard_ratio(fit, &terms, increment, options.confidence, cov)?;
            let level = if spec.kind == ExposureKind::Categorical {
                term.strip_prefix(EXPOSURE_TERM).and_then(|c| c.parse().ok())
            } else {
                None
            };
            estimates.push(TermEstimate {
                term: term.clone(),
                level,
                coefficient,
                std_error,
                increment,
                hazard_ratio,
            });
        }
        exposures.push(ExposureResult {
            column: summary.column.clone(),
            a_type: format!("{TYPE_TERM}{}", j + 1),
            estimates,
        });
    }

    let diagnostics = ReportDiagnostics {
        converged: fit.converged,
        iterations: fit.iterations,
        log_partial_likelihood: fit.log_partial_likelihood,
        score_max_norm: fit.diagnostics.score_max_norm,
        probable_separation: fit.diagnostics.probable_separation,
        skipped_strata: fit.diagnostics.skipped_strata,
        aliased: fit
            .column_names
            .iter()
            .zip(&fit.aliased)
            .filter(|(_, &a)| a)
            .map(|(n, _)| n.clone())
            .collect(),
        message: fit.diagnostics.message.clone(),
        warnings: aug.warnings.clone(),
        original_rows: dataset.len(),
        augmented_rows: aug.rows.len(),
        events: dataset.event_count(),
        dropped_incomplete: dataset.dropped_incomplete(),
    };

    Ok(ComparisonReport {
        kind: spec.kind,
        n_levels: spec.n_levels,
        reference_level: spec.n_levels.map(|_| spec.reference()),
        exposures,
        difference_test,
        type_tests,
        coefficients: coefficient_rows(fit),
        diagnostics,
        metadata: RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            dataset_fingerprint: dataset.fingerprint(),
            seed: None,
            config_hash: None,
            options: options.clone(),
        },
    })
}
