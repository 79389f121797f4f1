//! Writes a synthetic cohort CSV.
//!
//! cargo run -p dupcox-core --example make_cohort -- OUT.csv [n] [rho] [seed] [--identical]

use dupcox::data::{CohortRow, Dataset};
use dupcox::{simulate_cohort, write_dataset, SimConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let identical = args.iter().any(|a| a == "--identical");
    let pos: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let out = pos.first().expect("output path required");
    let n = pos.get(1).map_or(2000, |v| v.parse().expect("n"));
    let rho = pos.get(2).map_or(0.6, |v| v.parse().expect("rho"));
    let seed = pos.get(3).map_or(20_240_101, |v| v.parse().expect("seed"));
    let config = SimConfig {
        n_subjects: n,
        exposure_correlation: rho,
        true_beta: vec![-0.25, -0.1],
        covariate_effects: vec![0.3, -0.2],
        weibull_shape: 1.3,
        weibull_scale: 10.0,
        censoring_rate: 0.6,
        n_strata: 3,
        replicate_count: 1,
        master_seed: seed,
    };
    let mut data = simulate_cohort(&config, 0).expect("valid config");
    if identical {
        let rows: Vec<CohortRow> = data
            .rows()
            .iter()
            .cloned()
            .map(|mut r| {
                r.exposures[1] = r.exposures[0];
                r
            })
            .collect();
        data = Dataset::new(data.schema().clone(), rows).expect("same shape");
    }
    write_dataset(&data, out.as_str()).expect("write");
    eprintln!("{} rows, {} events -> {out}", data.len(), data.event_count());
}
