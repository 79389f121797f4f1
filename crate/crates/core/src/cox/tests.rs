use ndarray::{array, Array1, Array2};

use super::*;
use crate::design::DesignMatrix;

fn design(x: Array2<f64>, exit: &[f64], event: &[bool]) -> DesignMatrix {
    let n = exit.len();
    let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    DesignMatrix::from_parts(x, names, vec![0.0; n], exit.to_vec(), event.to_vec(), vec![0; n])
}

/// The four-row hand example: x = (1, 0, 1, 0), events at 1, 2, 3, row 4
/// censored at 4.
fn four_rows() -> DesignMatrix {
    design(
        array![[1.0], [0.0], [1.0], [0.0]],
        &[1.0, 2.0, 3.0, 4.0],
        &[true, true, true, false],
    )
}

/// Risk-set enumeration written out for one coefficient.
fn four_rows_oracle(b: f64) -> f64 {
    let e = b.exp();
    (b - (2.0 * e + 2.0).ln()) - (2.0 + e).ln() + (b - (e + 1.0).ln())
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    while (hi - lo).abs() > 1e-10 {
        if f(c) > f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
    }
    0.5 * (lo + hi)
}

#[test]
fn three_distinct_events_at_zero() {
    let d = design(array![[0.3], [1.0], [-2.0]], &[1.0, 2.0, 3.0], &[true, true, true]);
    let ll = log_partial_likelihood(&d, &array![0.0], TieMethod::Efron).unwrap();
    assert!((ll + 6f64.ln()).abs() < 1e-14);
    assert!((ll - (-1.791759)).abs() < 1e-6);
}

#[test]
fn singleton_risk_set() {
    let d = design(array![[2.0]], &[5.0], &[true]);
    assert_eq!(log_partial_likelihood(&d, &array![0.0], TieMethod::Efron).unwrap(), 0.0);
}

#[test]
fn four_rows_value_matches_enumeration() {
    let ll = log_partial_likelihood(&four_rows(), &array![0.5], TieMethod::Efron).unwrap();
    assert!((ll - four_rows_oracle(0.5)).abs() < 1e-14);
    assert!((ll - (-2.9356779183378015)).abs() < 1e-13);
}

#[test]
fn four_rows_score_at_zero() {
    // (1 - 2/4) + (0 - 1/3) + (1 - 1/2)
    let u = score(&four_rows(), &array![0.0], TieMethod::Efron).unwrap();
    assert!((u[0] - 2.0 / 3.0).abs() < 1e-14);
}

#[test]
fn four_rows_fit_matches_golden_section() {
    let f = fit(&four_rows(), &FitOptions::default()).unwrap();
    assert!(f.converged);
    let oracle = golden_section_max(four_rows_oracle, -5.0, 5.0);
    assert!((f.coefficients[0] - oracle).abs() < 1e-6);
    assert!((f.coefficients[0] - 0.9406135989232376).abs() < 1e-6);
    assert!(f.diagnostics.score_max_norm <= 1e-9);
}

#[test]
fn no_events_is_rejected() {
    let d = design(array![[1.0], [0.0]], &[1.0, 2.0], &[false, false]);
    assert_eq!(
        log_partial_likelihood(&d, &array![0.0], TieMethod::Efron),
        Err(CoxError::NoInformativeStrata)
    );
    assert_eq!(fit(&d, &FitOptions::default()).unwrap_err(), CoxError::NoInformativeStrata);
}

#[test]
fn constant_within_risk_sets_gives_zero_contrast() {
    let d = design(
        array![[1.0, 0.2], [1.0, -0.4], [1.0, 1.1], [1.0, 0.0]],
        &[1.0, 2.0, 3.0, 4.0],
        &[true, false, true, true],
    );
    let beta = array![0.0, 0.3];
    let u = score(&d, &beta, TieMethod::Efron).unwrap();
    let i = information(&d, &beta, TieMethod::Efron).unwrap();
    assert!(u[0].abs() < 1e-14);
    assert!(i[[0, 0]].abs() < 1e-14 && i[[0, 1]].abs() < 1e-14);
}

#[test]
fn efron_equals_breslow_without_ties() {
    let d = design(
        array![[0.5, 1.0], [-1.0, 0.0], [0.2, 1.0], [1.5, 0.0], [0.0, 1.0]],
        &[3.0, 1.0, 4.0, 2.0, 5.0],
        &[true, true, false, true, true],
    );
    let beta = array![0.4, -0.7];
    let e = log_partial_likelihood(&d, &beta, TieMethod::Efron).unwrap();
    let b = log_partial_likelihood(&d, &beta, TieMethod::Breslow).unwrap();
    assert_eq!(e, b);
    assert_eq!(
        information(&d, &beta, TieMethod::Efron).unwrap(),
        information(&d, &beta, TieMethod::Breslow).unwrap()
    );
}

#[test]
fn tied_deaths_differ_between_methods() {
    let d = design(
        array![[1.0], [0.0], [1.0], [0.0]],
        &[2.0, 2.0, 3.0, 3.0],
        &[true, true, true, false],
    );
    let beta = array![0.8];
    let e = log_partial_likelihood(&d, &beta, TieMethod::Efron).unwrap();
    let b = log_partial_likelihood(&d, &beta, TieMethod::Breslow).unwrap();
    let r = 0.8f64.exp();
    // Time 2: deaths {1, 2} among all four; time 3: death 3 among {3, 4}.
    let s0 = 2.0 * r + 2.0;
    let breslow = (0.8 - 2.0 * s0.ln()) + (0.8 - (r + 1.0).ln());
    let efron = (0.8 - s0.ln() - (s0 - 0.5 * (r + 1.0)).ln()) + (0.8 - (r + 1.0).ln());
    assert!((b - breslow).abs() < 1e-14);
    assert!((e - efron).abs() < 1e-14);
}

#[test]
fn left_truncated_rows_join_late() {
    // Row 1 enters at 2.5, so it is absent from the risk set at time 2.
    let mut d = design(array![[1.0], [0.0], [0.0]], &[2.0, 3.0, 4.0], &[true, true, false]);
    d.entry = vec![0.0, 0.0, 2.5];
    let beta = array![0.0];
    // risk sets: t=2 {0, 1}; t=3 {1, 2}
    let ll = log_partial_likelihood(&d, &beta, TieMethod::Efron).unwrap();
    assert!((ll - (-(2f64.ln()) - 2f64.ln())).abs() < 1e-14);
    // entry equal to an event time is not yet at risk at that time
    d.entry = vec![0.0, 0.0, 3.0];
    let ll = log_partial_likelihood(&d, &beta, TieMethod::Efron).unwrap();
    assert!((ll - (-(2f64.ln()))).abs() < 1e-14);
}

#[test]
fn perfect_separation_is_flagged() {
    let d = design(array![[1.0], [0.0]], &[1.0, 2.0], &[true, false]);
    let f = fit(&d, &FitOptions::default()).unwrap();
    assert!(!f.converged);
    assert!(f.diagnostics.probable_separation);
    assert!(f.coefficients[0] > 20.0);
}

#[test]
fn duplicated_column_is_aliased() {
    let x = array![[0.3, 1.0, 0.3], [1.2, 0.0, 1.2], [-0.5, 1.0, -0.5], [0.8, 0.0, 0.8], [0.1, 1.0, 0.1], [-1.0, 0.0, -1.0]];
    let d = design(x, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[true, true, false, true, true, true]);
    let f = fit(&d, &FitOptions::default()).unwrap();
    assert_eq!(f.aliased, vec![false, false, true]);
    assert!(f.coefficients[2].is_nan());
    assert!(f.converged);
    assert_eq!(f.model_covariance.row(2).to_vec(), vec![0.0; 3]);
    assert!(f.coefficient("x2").is_none());
    assert!(f.coefficient("x0").is_some());
}

fn random_design(seed: u64, n: usize, p: usize) -> DesignMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
    let exit: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0f64).round()).collect();
    let event: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    let mut d = design(x, &exit, &event);
    d.event[0] = true;
    d.cluster = (0..n).map(|i| i / 2).collect();
    d.cluster_labels = (0..n.div_ceil(2)).map(|c| c.to_string()).collect();
    d
}

#[test]
fn residuals_sum_to_score() {
    for seed in 0..10 {
        let d = random_design(seed, 25, 3);
        let beta = array![0.3, -0.2, 0.5];
        for ties in [TieMethod::Efron, TieMethod::Breslow] {
            let r = score_residuals(&d, &beta, ties).unwrap();
            let u = score(&d, &beta, ties).unwrap();
            let sums = r.sum_axis(ndarray::Axis(0));
            for j in 0..3 {
                assert!((sums[j] - u[j]).abs() < 1e-12, "seed {seed} {ties:?}");
            }
        }
    }
}

#[test]
fn robust_covariance_is_direct_sandwich() {
    let mut d = random_design(3, 30, 2);
    d = d.with_clusters((0..30).collect());
    let f = fit(&d, &FitOptions::default()).unwrap();
    assert!(f.converged);
    let beta = f.coefficients.clone();
    let resid = score_residuals(&d, &beta, TieMethod::Efron).unwrap();
    let inv = f.model_covariance.clone();
    let m = resid.t().dot(&resid);
    let direct = inv.dot(&m).dot(&inv);
    let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (a, b) in direct.iter().zip(f.robust_covariance.iter()) {
        assert!((a - b).abs() <= 1e-10 * scale);
    }
    let again = robust_covariance(&d, &f).unwrap();
    assert_eq!(again, f.robust_covariance);
}

#[test]
fn sandwich_is_exactly_symmetric() {
    for seed in 0..5 {
        let d = random_design(100 + seed, 40, 3);
        let f = fit(&d, &FitOptions::default()).unwrap();
        let b = &f.robust_covariance;
        assert_eq!(b, &b.t().to_owned());
        let m = &f.model_covariance;
        assert_eq!(m, &m.t().to_owned());
    }
}

#[test]
fn mismatched_beta_length() {
    let err = log_partial_likelihood(&four_rows(), &Array1::zeros(2), TieMethod::Efron).unwrap_err();
    assert_eq!(err, CoxError::DimensionMismatch { expected: 1, found: 2 });
}

#[test]
fn invalid_options() {
    let opts = FitOptions {
        gradient_tolerance: 0.0,
        ..FitOptions::default()
    };
    assert!(matches!(fit(&four_rows(), &opts), Err(CoxError::Options(_))));
}
