use ndarray::{Array1, Array2};

use super::likelihood::{evaluate, residuals, Order, RiskIndex};
use super::{index_for, CoxError, CoxFit, FitDiagnostics, FitOptions, TieMethod};
use crate::design::DesignMatrix;
use crate::linalg::{condition_number, Cholesky};

/// Pivot ratio below which a column is treated as collinear with earlier ones.
const ALIAS_TOLERANCE: f64 = 1e-10;
/// Coefficient magnitude taken as evidence of a divergent (monotone) likelihood.
const SEPARATION_THRESHOLD: f64 = 20.0;

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

fn embed(active: &[usize], p: usize, small: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((p, p));
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            out[[i, j]] = small[[a, b]];
        }
    }
    out
}

/// Newton–Raphson maximization of the stratified log partial likelihood.
///
/// Columns found collinear in the information matrix at the starting point
/// are aliased: they are dropped from the fit and get NaN coefficients. A step
/// that lowers the likelihood is halved up to `step_halvings_max` times.
/// Non-convergence is reported through `converged` and the diagnostics rather
/// than as an error.
pub fn fit(design: &DesignMatrix, options: &FitOptions) -> Result<CoxFit, CoxError> {
    options.check()?;
    let index = index_for(design)?;
    let p = design.n_cols();
    let ties = options.tie_method;

    let start = match &options.initial_coefficients {
        Some(init) if init.len() != p => {
            return Err(CoxError::DimensionMismatch {
                expected: p,
                found: init.len(),
            })
        }
        Some(init) => Array1::from_vec(init.clone()),
        None => Array1::zeros(p),
    };

    let initial = evaluate(design, &index, &start, ties, Order::Hessian)?;
    let aliased = Cholesky::new(&initial.information, ALIAS_TOLERANCE).aliased().to_vec();
    let active: Vec<usize> = (0..p).filter(|&j| !aliased[j]).collect();
    if active.is_empty() {
        return Err(CoxError::AllAliased);
    }
    let reduced = design.select_columns(&active);
    let mut beta: Array1<f64> = active.iter().map(|&j| start[j]).collect();

    let mut current = evaluate(&reduced, &index, &beta, ties, Order::Hessian)?;
    let initial_log_likelihood = current.loglik;
    let mut iterations = 0usize;
    let mut total_halvings = 0usize;
    let mut last_step_improved = false;
    let mut message = None;
    let mut converged = max_abs(&current.score) <= options.gradient_tolerance;

    while !converged && iterations < options.max_iterations {
        let chol = Cholesky::new(&current.information, 0.0);
        if !chol.is_full_rank() {
            message = Some("information became singular during iteration".to_owned());
            break;
        }
        let mut step = chol.solve(&current.score);
        let mut accepted = None;
        for halving in 0..=options.step_halvings_max {
            let trial = &beta + &step;
            match evaluate(&reduced, &index, &trial, ties, Order::Hessian) {
                Ok(next) if next.loglik >= current.loglik - 1e-12 * current.loglik.abs().max(1.0) => {
                    total_halvings += halving;
                    accepted = Some((trial, next));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((trial, next)) = accepted else {
            message = Some("step halving failed to increase the log partial likelihood".to_owned());
            break;
        };
        last_step_improved = next.loglik > current.loglik;
        beta = trial;
        current = next;
        iterations += 1;
        converged = max_abs(&current.score) <= options.gradient_tolerance;
    }
    if !converged && message.is_none() {
        message = Some(format!("no convergence in {} iterations", options.max_iterations));
    }

    let probable_separation = max_abs(&beta) > SEPARATION_THRESHOLD && last_step_improved;
    if probable_separation {
        converged = false;
        message = Some("monotone likelihood: a coefficient is diverging (probable separation)".to_owned());
    }

    let chol = Cholesky::new(&current.information, 0.0);
    if !chol.is_full_rank() {
        return Err(CoxError::SingularInformation {
            condition_number: condition_number(&current.information),
        });
    }
    let model_small = chol.inverse();
    let robust_small = sandwich(&reduced, &index, &beta, ties, &model_small)?;

    let mut coefficients = Array1::from_elem(p, f64::NAN);
    for (a, &j) in active.iter().enumerate() {
        coefficients[j] = beta[a];
    }
    Ok(CoxFit {
        column_names: design.column_names.clone(),
        coefficients,
        model_covariance: embed(&active, p, &model_small),
        robust_covariance: embed(&active, p, &robust_small),
        log_partial_likelihood: current.loglik,
        iterations,
        converged,
        aliased,
        tie_method: ties,
        diagnostics: FitDiagnostics {
            score_max_norm: max_abs(&current.score),
            step_halvings: total_halvings,
            skipped_strata: index.skipped_strata(),
            probable_separation,
            initial_log_likelihood,
            message,
        },
    })
}

/// `A⁻¹ M A⁻¹` with `M` the sum over clusters of outer products of
/// cluster-summed score residuals, computed as a sum of outer products of
/// per-cluster `A⁻¹ u_c` so that the result is exactly symmetric.
fn sandwich(
    design: &DesignMatrix,
    index: &RiskIndex,
    beta: &Array1<f64>,
    ties: TieMethod,
    inverse_information: &Array2<f64>,
) -> Result<Array2<f64>, CoxError> {
    let resid = residuals(design, index, beta, ties)?;
    let p = design.n_cols();
    let n_clusters = design.cluster_labels.len().max(design.cluster.iter().max().map_or(0, |c| c + 1));
    let mut per_cluster = Array2::<f64>::zeros((n_clusters, p));
    for (i, &c) in design.cluster.iter().enumerate() {
        let mut row = per_cluster.row_mut(c);
        row += &resid.row(i);
    }
    let dfbeta = per_cluster.dot(inverse_information);
    let mut out = Array2::<f64>::zeros((p, p));
    for d in dfbeta.rows() {
        for a in 0..p {
            for b in a..p {
                out[[a, b]] += d[a] * d[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            out[[a, b]] = out[[b, a]];
        }
    }
    Ok(out)
}

/// Recomputes the cluster-robust covariance of a fit from the design,
/// grouping rows by `design.cluster`. Aliased rows and columns are zero.
pub fn robust_covariance(design: &DesignMatrix, fit: &CoxFit) -> Result<Array2<f64>, CoxError> {
    let index = index_for(design)?;
    let active = fit.active();
    let reduced = design.select_columns(&active);
    let beta: Array1<f64> = active.iter().map(|&j| fit.coefficients[j]).collect();
    let info = evaluate(&reduced, &index, &beta, fit.tie_method, Order::Hessian)?.information;
    let chol = Cholesky::new(&info, 0.0);
    if !chol.is_full_rank() {
        return Err(CoxError::SingularInformation {
            condition_number: condition_number(&info),
        });
    }
    let small = sandwich(&reduced, &index, &beta, fit.tie_method, &chol.inverse())?;
    Ok(embed(&active, design.n_cols(), &small))
}
