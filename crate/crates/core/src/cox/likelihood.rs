//! Stratified log partial likelihood and its derivatives for counting-process
//! data.
//!
//! Within a stratum, row `i` is in the risk set at event time `t` iff
//! `entry_i < t <= exit_i`. Distinct event times are visited in decreasing
//! order: rows join the risk sums once `exit >= t` and leave once
//! `entry >= t`. Linear predictors are shifted by the stratum maximum before
//! exponentiation; the shift cancels in every ratio and is added back to the
//! log-likelihood.

use ndarray::{Array1, Array2, ArrayView1};

use super::{CoxError, TieMethod};
use crate::design::DesignMatrix;

/// Rows of one stratum pre-sorted for the risk-set sweep.
#[derive(Debug, Clone)]
struct StratumIndex {
    rows: Vec<usize>,
    by_exit_desc: Vec<usize>,
    by_entry_desc: Vec<usize>,
    /// Distinct event times, descending, with the rows that fail at each.
    event_times: Vec<(f64, Vec<usize>)>,
}

/// Time ordering of a design, independent of the coefficients.
#[derive(Debug, Clone)]
pub(crate) struct RiskIndex {
    strata: Vec<StratumIndex>,
}

impl RiskIndex {
    pub(crate) fn new(design: &DesignMatrix) -> Self {
        let mut members = vec![Vec::new(); design.n_strata()];
        for (i, &s) in design.strata.iter().enumerate() {
            members[s].push(i);
        }
        let strata = members
            .into_iter()
            .map(|rows| {
                let mut by_exit_desc = rows.clone();
                by_exit_desc.sort_by(|&a, &b| design.exit[b].total_cmp(&design.exit[a]));
                let mut by_entry_desc = rows.clone();
                by_entry_desc.sort_by(|&a, &b| design.entry[b].total_cmp(&design.entry[a]));
                let mut event_times: Vec<(f64, Vec<usize>)> = Vec::new();
                for &i in &by_exit_desc {
                    if !design.event[i] {
                        continue;
                    }
                    match event_times.last_mut() {
                        Some((t, deaths)) if *t == design.exit[i] => deaths.push(i),
                        _ => event_times.push((design.exit[i], vec![i])),
                    }
                }
                StratumIndex {
                    rows,
                    by_exit_desc,
                    by_entry_desc,
                    event_times,
                }
            })
            .collect();
        Self { strata }
    }

    pub(crate) fn has_events(&self) -> bool {
        self.strata.iter().any(|s| !s.event_times.is_empty())
    }

    pub(crate) fn skipped_strata(&self) -> usize {
        self.strata
            .iter()
            .filter(|s| !s.rows.is_empty() && s.event_times.is_empty())
            .count()
    }
}

/// Log partial likelihood with optional score and information.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: Array1<f64>,
    pub information: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

fn linear_predictor(design: &DesignMatrix, beta: &Array1<f64>) -> Result<Array1<f64>, CoxError> {
    if beta.len() != design.n_cols() {
        return Err(CoxError::DimensionMismatch {
            expected: design.n_cols(),
            found: beta.len(),
        });
    }
    let eta = design.x.dot(beta);
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::NonFinite);
    }
    Ok(eta)
}

/// Weight of the tied-death block at the `k`-th of `d` Efron steps. Breslow
/// keeps every death in every denominator.
#[inline]
fn tie_fraction(ties: TieMethod, k: usize, d: usize) -> f64 {
    match ties {
        TieMethod::Efron => k as f64 / d as f64,
        TieMethod::Breslow => 0.0,
    }
}

/// Upper triangle only.
fn add_outer(acc: &mut Array2<f64>, x: ArrayView1<f64>, w: f64) {
    let p = x.len();
    for a in 0..p {
        let wa = w * x[a];
        for b in a..p {
            acc[[a, b]] += wa * x[b];
        }
    }
}

pub(crate) fn evaluate(
    design: &DesignMatrix,
    index: &RiskIndex,
    beta: &Array1<f64>,
    ties: TieMethod,
    order: Order,
) -> Result<Evaluation, CoxError> {
    let eta = linear_predictor(design, beta)?;
    let p = design.n_cols();
    let want_grad = order != Order::Value;
    let want_hess = order == Order::Hessian;

    let mut loglik = 0.0;
    let mut score = Array1::<f64>::zeros(p);
    let mut information = Array2::<f64>::zeros((p, p));

    let mut s1 = Array1::<f64>::zeros(p);
    let mut s2 = Array2::<f64>::zeros((p, p));
    let mut d1 = Array1::<f64>::zeros(p);
    let mut d2 = Array2::<f64>::zeros((p, p));

    for stratum in &index.strata {
        if stratum.event_times.is_empty() {
            continue;
        }
        let shift = stratum
            .rows
            .iter()
            .map(|&i| eta[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let risk = |i: usize| (eta[i] - shift).exp();

        let mut stratum_ll = 0.0;
        let mut s0 = 0.0;
        s1.fill(0.0);
        s2.fill(0.0);
        let mut next_exit = 0usize;
        let mut next_entry = 0usize;

        for (t, deaths) in &stratum.event_times {
            let t = *t;
            while next_exit < stratum.by_exit_desc.len() && design.exit[stratum.by_exit_desc[next_exit]] >= t {
                let i = stratum.by_exit_desc[next_exit];
                let r = risk(i);
                s0 += r;
                if want_grad {
                    s1.scaled_add(r, &design.x.row(i));
                }
                if want_hess {
                    add_outer(&mut s2, design.x.row(i), r);
                }
                next_exit += 1;
            }
            while next_entry < stratum.by_entry_desc.len() && design.entry[stratum.by_entry_desc[next_entry]] >= t {
                let i = stratum.by_entry_desc[next_entry];
                let r = risk(i);
                s0 -= r;
                if want_grad {
                    s1.scaled_add(-r, &design.x.row(i));
                }
                if want_hess {
                    add_outer(&mut s2, design.x.row(i), -r);
                }
                next_entry += 1;
            }

            let d = deaths.len();
            let mut d0 = 0.0;
            if want_grad {
                d1.fill(0.0);
            }
            if want_hess {
                d2.fill(0.0);
            }
            for &i in deaths {
                let r = risk(i);
                stratum_ll += eta[i] - shift;
                d0 += r;
                if want_grad {
                    score += &design.x.row(i);
                    d1.scaled_add(r, &design.x.row(i));
                }
                if want_hess {
                    add_outer(&mut d2, design.x.row(i), r);
                }
            }
            for k in 0..d {
                let f = tie_fraction(ties, k, d);
                let denom = s0 - f * d0;
                stratum_ll -= denom.ln();
                if want_grad {
                    let mean = (&s1 - &(f * &d1)) / denom;
                    score -= &mean;
                    if want_hess {
                        for a in 0..p {
                            for b in a..p {
                                information[[a, b]] +=
                                    (s2[[a, b]] - f * d2[[a, b]]) / denom - mean[a] * mean[b];
                            }
                        }
                    }
                }
            }
        }
        loglik += stratum_ll;
    }
    if !loglik.is_finite() {
        return Err(CoxError::NonFinite);
    }
    for a in 0..p {
        for b in 0..a {
            information[[a, b]] = information[[b, a]];
        }
    }
    Ok(Evaluation {
        loglik,
        score,
        information,
    })
}

/// Per-row score residuals: row contributions whose sum is the score vector.
///
/// For row `i`, the residual is the event term `x_i - mean(xbar_k)` at its own
/// failure time minus the compensator `r_i * sum_k w_ik (x_i - xbar_k) / D_k`
/// accumulated over every event time at which it is at risk, with Efron
/// weights `w_ik = 1 - k/d` for the rows failing at that time.
pub(crate) fn residuals(
    design: &DesignMatrix,
    index: &RiskIndex,
    beta: &Array1<f64>,
    ties: TieMethod,
) -> Result<Array2<f64>, CoxError> {
    let eta = linear_predictor(design, beta)?;
    let n = design.n_rows();
    let p = design.n_cols();
    let mut out = Array2::<f64>::zeros((n, p));

    for stratum in &index.strata {
        if stratum.event_times.is_empty() {
            continue;
        }
        let shift = stratum
            .rows
            .iter()
            .map(|&i| eta[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let risk = |i: usize| (eta[i] - shift).exp();
        let n_times = stratum.event_times.len();

        // Per event time, stored in ascending time order.
        let mut hazard = vec![0.0; n_times];
        let mut hazard_x = Array2::<f64>::zeros((n_times, p));
        let mut hazard_dead = vec![0.0; n_times];
        let mut hazard_x_dead = Array2::<f64>::zeros((n_times, p));
        let mut mean_xbar = Array2::<f64>::zeros((n_times, p));

        let mut s0 = 0.0;
        let mut s1 = Array1::<f64>::zeros(p);
        let mut next_exit = 0usize;
        let mut next_entry = 0usize;
        for (pos, (t, deaths)) in stratum.event_times.iter().enumerate() {
            let t = *t;
            let slot = n_times - 1 - pos;
            while next_exit < stratum.by_exit_desc.len() && design.exit[stratum.by_exit_desc[next_exit]] >= t {
                let i = stratum.by_exit_desc[next_exit];
                let r = risk(i);
                s0 += r;
                s1.scaled_add(r, &design.x.row(i));
                next_exit += 1;
            }
            while next_entry < stratum.by_entry_desc.len() && design.entry[stratum.by_entry_desc[next_entry]] >= t {
                let i = stratum.by_entry_desc[next_entry];
                let r = risk(i);
                s0 -= r;
                s1.scaled_add(-r, &design.x.row(i));
                next_entry += 1;
            }
            let d = deaths.len();
            let mut d0 = 0.0;
            let mut d1 = Array1::<f64>::zeros(p);
            for &i in deaths {
                let r = risk(i);
                d0 += r;
                d1.scaled_add(r, &design.x.row(i));
            }
            for k in 0..d {
                let f = tie_fraction(ties, k, d);
                let denom = s0 - f * d0;
                let mean = (&s1 - &(f * &d1)) / denom;
                hazard[slot] += 1.0 / denom;
                hazard_dead[slot] += (1.0 - f) / denom;
                for a in 0..p {
                    hazard_x[[slot, a]] += mean[a] / denom;
                    hazard_x_dead[[slot, a]] += (1.0 - f) * mean[a] / denom;
                    mean_xbar[[slot, a]] += mean[a] / d as f64;
                }
            }
        }

        // Prefix sums over ascending event times; cum[e] covers times 0..e.
        let mut cum = vec![0.0; n_times + 1];
        let mut cum_x = Array2::<f64>::zeros((n_times + 1, p));
        for e in 0..n_times {
            cum[e + 1] = cum[e] + hazard[e];
            for a in 0..p {
                cum_x[[e + 1, a]] = cum_x[[e, a]] + hazard_x[[e, a]];
            }
        }
        let times_asc: Vec<f64> = stratum.event_times.iter().rev().map(|(t, _)| *t).collect();

        for &i in &stratum.rows {
            let lo = times_asc.partition_point(|&t| t <= design.entry[i]);
            let hi = times_asc.partition_point(|&t| t <= design.exit[i]);
            if hi <= lo {
                continue;
            }
            let mut a_sum = cum[hi] - cum[lo];
            let mut b_sum: Array1<f64> = &cum_x.row(hi) - &cum_x.row(lo);
            let x_i = design.x.row(i);
            let mut row = out.row_mut(i);
            if design.event[i] {
                // The row fails at its own exit time, the last event time in range.
                let e = hi - 1;
                a_sum += hazard_dead[e] - hazard[e];
                for a in 0..p {
                    b_sum[a] += hazard_x_dead[[e, a]] - hazard_x[[e, a]];
                    row[a] += x_i[a] - mean_xbar[[e, a]];
                }
            }
            let r = risk(i);
            for a in 0..p {
                row[a] -= r * (x_i[a] * a_sum - b_sum[a]);
            }
        }
    }
    Ok(out)
}
