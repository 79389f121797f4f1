//! Stratified Cox proportional hazards regression.
//!
//! [`fit`] maximizes the log partial likelihood by Newton–Raphson with step
//! halving, flags aliased columns, and returns model-based and cluster-robust
//! (sandwich) covariance matrices. Baseline hazards are never estimated.

mod fit;
mod likelihood;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignMatrix;
use likelihood::{evaluate, Order, RiskIndex};

pub use fit::{fit, robust_covariance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoxError {
    #[error("no informative strata: the design contains no events")]
    NoInformativeStrata,
    #[error("coefficient vector has length {found}, design has {expected} columns")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("every design column is aliased")]
    AllAliased,
    #[error("information matrix is singular on the non-aliased subspace (condition number {condition_number:.3e})")]
    SingularInformation { condition_number: f64 },
    #[error("non-finite linear predictor or likelihood")]
    NonFinite,
    #[error("invalid fit options: {0}")]
    Options(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub tie_method: TieMethod,
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the score.
    pub gradient_tolerance: f64,
    pub step_halvings_max: usize,
    /// Starting point; zeros when absent.
    pub initial_coefficients: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tie_method: TieMethod::Efron,
            max_iterations: 25,
            gradient_tolerance: 1e-9,
            step_halvings_max: 10,
            initial_coefficients: None,
        }
    }
}

impl FitOptions {
    pub fn with_ties(mut self, tie_method: TieMethod) -> Self {
        self.tie_method = tie_method;
        self
    }

    pub fn check(&self) -> Result<(), CoxError> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(CoxError::Options("gradient_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(CoxError::Options("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    /// Largest absolute score component at the returned coefficients.
    pub score_max_norm: f64,
    pub step_halvings: usize,
    /// Strata with rows but no events; they contribute nothing.
    pub skipped_strata: usize,
    /// A coefficient exceeded 20 in magnitude while the likelihood was still
    /// increasing: the maximizer is probably at infinity.
    pub probable_separation: bool,
    pub initial_log_likelihood: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub column_names: Vec<String>,
    /// Aliased coefficients are NaN.
    pub coefficients: Array1<f64>,
    /// Inverse information at the estimate; zero rows and columns for aliased
    /// coefficients.
    pub model_covariance: Array2<f64>,
    /// Cluster sandwich estimate, aliased rows and columns zero.
    pub robust_covariance: Array2<f64>,
    pub log_partial_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub aliased: Vec<bool>,
    pub tie_method: TieMethod,
    pub diagnostics: FitDiagnostics,
}

impl CoxFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Estimate for a named coefficient; `None` when unknown or aliased.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let j = self.index(name)?;
        (!self.aliased[j]).then(|| self.coefficients[j])
    }

    pub fn is_aliased(&self, name: &str) -> bool {
        self.index(name).is_some_and(|j| self.aliased[j])
    }

    /// Indices of the non-aliased coefficients.
    pub fn active(&self) -> Vec<usize> {
        (0..self.aliased.len()).filter(|&j| !self.aliased[j]).collect()
    }

    /// Coefficients with aliased entries replaced by zero, as used for
    /// linear predictors.
    pub fn coefficients_or_zero(&self) -> Array1<f64> {
        self.coefficients.mapv(|b| if b.is_nan() { 0.0 } else { b })
    }
}

fn index_for(design: &DesignMatrix) -> Result<RiskIndex, CoxError> {
    let index = RiskIndex::new(design);
    if !index.has_events() {
        return Err(CoxError::NoInformativeStrata);
    }
    Ok(index)
}

/// Log partial likelihood at `beta` (one entry per design column).
pub fn log_partial_likelihood(design: &DesignMatrix, beta: &Array1<f64>, ties: TieMethod) -> Result<f64, CoxError> {
    let index = index_for(design)?;
    Ok(evaluate(design, &index, beta, ties, Order::Value)?.loglik)
}

/// Gradient of the log partial likelihood.
pub fn score(design: &DesignMatrix, beta: &Array1<f64>, ties: TieMethod) -> Result<Array1<f64>, CoxError> {
    let index = index_for(design)?;
    Ok(evaluate(design, &index, beta, ties, Order::Gradient)?.score)
}

/// Negative Hessian of the log partial likelihood.
pub fn information(design: &DesignMatrix, beta: &Array1<f64>, ties: TieMethod) -> Result<Array2<f64>, CoxError> {
    let index = index_for(design)?;
    Ok(evaluate(design, &index, beta, ties, Order::Hessian)?.information)
}

/// Per-row score residuals (rows × columns). Column sums equal [`score`].
pub fn score_residuals(design: &DesignMatrix, beta: &Array1<f64>, ties: TieMethod) -> Result<Array2<f64>, CoxError> {
    let index = index_for(design)?;
    likelihood::residuals(design, &index, beta, ties)
}

#[cfg(test)]
mod tests;
