//! Stratified Cox regression in counting-process form, and the duplication
//! method for testing whether two or more exposures are associated with the
//! same outcome in the same way.
//!
//! The comparison stacks one copy of the cohort per exposure, tags each copy
//! with an `A_type` indicator, stratifies by it, and tests the
//! exposure-by-`A_type` interactions with a cluster-robust Wald test.
//!
//! ```
//! use dupcox::{compare_exposures, parse_dataset, CompareOptions, ExposureSpec, Schema};
//!
//! let schema = Schema {
//!     id_column: "id".into(),
//!     entry_column: None,
//!     exit_column: "time".into(),
//!     event_column: "y".into(),
//!     exposure_columns: vec!["a".into(), "b".into()],
//!     covariate_columns: vec![],
//!     strata_columns: vec![],
//! };
//! let text = "id,time,y,a,b\n1,2,1,0.5,0.1\n2,3,1,0.1,0.9\n3,4,0,0.7,0.4\n4,5,1,0.2,0.3\n5,6,0,0.9,0.6\n";
//! let data = parse_dataset(text, &schema).unwrap();
//! let report = compare_exposures(&data, &ExposureSpec::continuous(&["a", "b"]), &CompareOptions::default()).unwrap();
//! assert_eq!(report.difference_test.df, 1);
//! ```

pub mod cox;
pub mod data;
pub mod design;
pub mod inference;
pub mod linalg;
pub mod simlab;
pub mod special;

pub use cox::{fit, CoxError, CoxFit, FitOptions, TieMethod};
pub use data::{load_dataset, parse_dataset, validate, write_dataset, CohortRow, DataError, Dataset, Schema, ValidationReport};
pub use design::{
    build_design_matrix, duplicate_augment, AugmentedDataset, DesignError, DesignMatrix, ExposureKind, ExposureSpec, Increment,
};
pub use inference::{
    compare_exposures, hazard_ratio, render_table, wald_multivariate, wald_univariate, CompareError, CompareOptions,
    ComparisonReport, CovarianceKind, HazardRatio, InferenceError, TestResult,
};
pub use simlab::{estimate_power, estimate_type1_error, simulate_cohort, RejectionEstimate, SimConfig, SimError};
