//! Fixtures shared by the benchmarks.

use dupcox::design::DesignMatrix;
use dupcox::{build_design_matrix, duplicate_augment, simulate_cohort, Dataset, SimConfig};

pub fn config(n_subjects: usize, n_exposures: usize) -> SimConfig {
    SimConfig {
        n_subjects,
        exposure_correlation: 0.5,
        true_beta: vec![0.3; n_exposures],
        covariate_effects: vec![0.3, -0.2],
        weibull_shape: 1.3,
        weibull_scale: 10.0,
        censoring_rate: 0.4,
        n_strata: 2,
        replicate_count: 1,
        master_seed: 7,
    }
}

pub fn cohort(n_subjects: usize, n_exposures: usize) -> Dataset {
    simulate_cohort(&config(n_subjects, n_exposures), 0).expect("valid config")
}

/// Duplicated design for a continuous comparison.
pub fn design(n_subjects: usize, n_exposures: usize) -> DesignMatrix {
    let cfg = config(n_subjects, n_exposures);
    let data = cohort(n_subjects, n_exposures);
    let spec = cfg.exposure_spec();
    let aug = duplicate_augment(&data, &spec).expect("augments");
    build_design_matrix(&aug, &spec).expect("design")
}
