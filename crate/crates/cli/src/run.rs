use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use dupcox::cox::{self, CoxError};
use dupcox::data::CheckResult;
use dupcox::design::{duplicate_augment, separate_design, DesignError};
use dupcox::inference::{format_p_value, hazard_ratio, wald_univariate, CompareError, HazardRatio};
use dupcox::simlab::{estimate_power, estimate_type1_error, RejectionEstimate};
use dupcox::{compare_exposures, load_dataset, render_table, validate, ComparisonReport, Dataset, ExposureKind};

use crate::config::{Command, Hypothesis, OutputFormat, RunConfig};
use crate::CliError;

/// Version of the machine-readable output layout. Fields may be added
/// without a bump; renaming or removing one requires it.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    format_version: u32,
    command: &'a str,
    tool_version: &'a str,
    config_sha256: String,
    seed: Option<u64>,
}

fn provenance(config: &RunConfig, command: Command) -> Provenance<'static> {
    Provenance {
        format_version: FORMAT_VERSION,
        command: command.name(),
        tool_version: env!("CARGO_PKG_VERSION"),
        config_sha256: config.hash(),
        seed: config.seed,
    }
}

fn banner(p: &Provenance) -> String {
    let seed = p.seed.map_or_else(|| "none".to_owned(), |s| s.to_string());
    format!("dupcox {}  config sha256 {}  seed {seed}\n", p.tool_version, p.config_sha256)
}

/// Human text for standard output plus the payload for the output file.
pub struct RunOutput {
    pub stdout: String,
    pub file: String,
    pub converged: bool,
}

fn design_error(e: DesignError) -> CliError {
    match e {
        DesignError::Spec(_) | DesignError::UnknownExposure(_) => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn cox_error(e: CoxError) -> CliError {
    match e {
        CoxError::Options(_) => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn compare_error(e: CompareError) -> CliError {
    match e {
        CompareError::Design(d) => design_error(d),
        CompareError::Fit(f) => cox_error(f),
        CompareError::Inference(i) => CliError::Data(i.to_string()),
    }
}

fn load(config: &RunConfig) -> Result<Dataset, CliError> {
    let input = config.input.as_deref().expect("checked");
    let schema = config.schema.as_ref().expect("checked");
    load_dataset(input, schema).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))
}

fn data_summary(path: &Path, data: &Dataset) -> String {
    format!(
        "input {} ({} rows, {} events, {} incomplete rows dropped)\n",
        path.display(),
        data.len(),
        data.event_count(),
        data.dropped_incomplete()
    )
}

fn failed_checks(checks: &[CheckResult]) -> String {
    let mut out = String::new();
    for c in checks.iter().filter(|c| !c.passed) {
        for f in &c.findings {
            let _ = writeln!(out, "warning: {:?}: {}", c.check, f.message);
        }
    }
    out
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    input: String,
    dataset_fingerprint: String,
    validation: &'a [CheckResult],
    reports: &'a [ComparisonReport],
}

pub fn run_compare(config: &RunConfig) -> Result<RunOutput, CliError> {
    config.check_for(Command::Compare)?;
    let data = load(config)?;
    let validation = validate(&data);
    let options = config.compare_options();
    let prov = provenance(config, Command::Compare);
    let mut reports = Vec::new();
    for spec in config.exposure.as_ref().expect("checked").list() {
        let mut report = compare_exposures(&data, spec, &options).map_err(compare_error)?;
        report.metadata.seed = config.seed;
        report.metadata.config_hash = Some(prov.config_sha256.clone());
        reports.push(report);
    }

    let mut human = banner(&prov);
    human.push_str(&data_summary(config.input.as_deref().expect("checked"), &data));
    human.push_str(&failed_checks(&validation.checks));
    human.push('\n');
    human.push_str(&render_table(&reports));
    human.push_str("\nDifference tests (robust Wald):\n");
    for r in &reports {
        let t = &r.difference_test;
        let _ = writeln!(
            human,
            "  {:<12} Q = {:.4}, df = {}, {}",
            kind_name(r.kind),
            t.statistic,
            t.df,
            format_p_value(t.p_value)
        );
        for w in &r.diagnostics.warnings {
            let _ = writeln!(human, "  warning: {w}");
        }
        if !r.diagnostics.aliased.is_empty() {
            let _ = writeln!(human, "  aliased: {}", r.diagnostics.aliased.join(", "));
        }
    }
    let converged = reports.iter().all(|r| r.diagnostics.converged);
    let file = match config.output_format {
        OutputFormat::Human => human.clone(),
        OutputFormat::Machine => {
            let out = CompareOutput {
                provenance: prov,
                input: config.input.as_deref().expect("checked").display().to_string(),
                dataset_fingerprint: data.fingerprint(),
                validation: &validation.checks,
                reports: &reports,
            };
            serde_json::to_string_pretty(&out).expect("serializes") + "\n"
        }
    };
    Ok(RunOutput {
        stdout: human,
        file,
        converged,
    })
}

fn kind_name(kind: ExposureKind) -> &'static str {
    match kind {
        ExposureKind::Continuous => "continuous",
        ExposureKind::Dichotomous => "dichotomous",
        ExposureKind::Categorical => "categorical",
        ExposureKind::Trend => "trend",
    }
}

#[derive(Serialize)]
struct FitRow {
    exposure: String,
    kind: ExposureKind,
    term: String,
    coefficient: f64,
    model_se: f64,
    robust_se: f64,
    increment: f64,
    hazard_ratio: Option<HazardRatio>,
    p_value: Option<f64>,
    aliased: bool,
}

#[derive(Serialize)]
struct FitSummary {
    exposure: String,
    kind: ExposureKind,
    converged: bool,
    iterations: usize,
    log_partial_likelihood: f64,
    message: Option<String>,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    input: String,
    dataset_fingerprint: String,
    fits: Vec<FitSummary>,
    coefficients: Vec<FitRow>,
}

/// Separate single-exposure Cox fits on the original data.
pub fn run_fit(config: &RunConfig) -> Result<RunOutput, CliError> {
    config.check_for(Command::Fit)?;
    let data = load(config)?;
    let options = config.compare_options();
    let prov = provenance(config, Command::Fit);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for spec in config.exposure.as_ref().expect("checked").list() {
        let aug = duplicate_augment(&data, spec).map_err(design_error)?;
        let terms = spec.term_names();
        for (j, column) in spec.source_columns.iter().enumerate() {
            let design = separate_design(&data, spec, j).map_err(design_error)?;
            let fit = cox::fit(&design, &options.fit).map_err(cox_error)?;
            let increment = match spec.kind {
                ExposureKind::Categorical => 1.0,
                _ => aug.exposures[j].increment,
            };
            for (c, name) in fit.column_names.iter().enumerate() {
                let scale = if terms.contains(name) { increment } else { 1.0 };
                let (hr, p) = if fit.aliased[c] {
                    (None, None)
                } else {
                    let hr = hazard_ratio(&fit, name, scale, options.confidence, options.covariance).ok();
                    let p = wald_univariate(&fit, name, options.covariance).ok().map(|t| t.p_value);
                    (hr, p)
                };
                rows.push(FitRow {
                    exposure: column.clone(),
                    kind: spec.kind,
                    term: name.clone(),
                    coefficient: fit.coefficients[c],
                    model_se: fit.model_covariance[[c, c]].sqrt(),
                    robust_se: fit.robust_covariance[[c, c]].sqrt(),
                    increment: scale,
                    hazard_ratio: hr,
                    p_value: p,
                    aliased: fit.aliased[c],
                });
            }
            fits.push(FitSummary {
                exposure: column.clone(),
                kind: spec.kind,
                converged: fit.converged,
                iterations: fit.iterations,
                log_partial_likelihood: fit.log_partial_likelihood,
                message: fit.diagnostics.message.clone(),
            });
        }
    }

    let mut human = banner(&prov);
    human.push_str(&data_summary(config.input.as_deref().expect("checked"), &data));
    human.push('\n');
    let table: Vec<[String; 6]> = std::iter::once([
        "exposure".to_owned(),
        "term".to_owned(),
        "coef".to_owned(),
        "robust se".to_owned(),
        "HR [CI]".to_owned(),
        "P".to_owned(),
    ])
    .chain(rows.iter().map(|r| {
        [
            format!("{} ({})", r.exposure, kind_name(r.kind)),
            r.term.clone(),
            if r.aliased { "aliased".to_owned() } else { format!("{:.4}", r.coefficient) },
            format!("{:.4}", r.robust_se),
            r.hazard_ratio.map_or_else(String::new, |h| h.to_string()),
            r.p_value.map_or_else(String::new, format_p_value),
        ]
    }))
    .collect();
    human.push_str(&align(&table));
    for f in &fits {
        if !f.converged {
            let _ = writeln!(
                human,
                "warning: fit for {} did not converge ({})",
                f.exposure,
                f.message.as_deref().unwrap_or("no message")
            );
        }
    }
    let converged = fits.iter().all(|f| f.converged);
    let file = match config.output_format {
        OutputFormat::Human => human.clone(),
        OutputFormat::Machine => {
            let out = FitOutput {
                provenance: prov,
                input: config.input.as_deref().expect("checked").display().to_string(),
                dataset_fingerprint: data.fingerprint(),
                fits,
                coefficients: rows,
            };
            serde_json::to_string_pretty(&out).expect("serializes") + "\n"
        }
    };
    Ok(RunOutput {
        stdout: human,
        file,
        converged,
    })
}

fn align<const N: usize>(rows: &[[String; N]]) -> String {
    let widths: Vec<usize> = (0..N)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            line.extend(std::iter::repeat_n(' ', widths[j] - cell.chars().count()));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SimRow {
    scenario: String,
    hypothesis: &'static str,
    n_subjects: usize,
    exposure_correlation: f64,
    master_seed: u64,
    alpha: f64,
    replicates: usize,
    failures: usize,
    valid: bool,
    rejections: usize,
    rate: f64,
    ci_lower: f64,
    ci_upper: f64,
    monte_carlo_se: f64,
    naive_rate: Option<f64>,
    overlap_fraction: f64,
    ks_statistic: f64,
    tool_version: &'static str,
    config_sha256: String,
}

pub fn run_simulate(config: &RunConfig) -> Result<RunOutput, CliError> {
    config.check_for(Command::Simulate)?;
    let sim = config.simulation.as_ref().expect("checked");
    let options = config.compare_options();
    let prov = provenance(config, Command::Simulate);
    let mut rows = Vec::new();
    for s in &sim.scenario {
        let cfg = s.sim_config(config.seed)?;
        let alpha = s.alpha.unwrap_or(sim.alpha);
        let est: RejectionEstimate = match s.hypothesis {
            Hypothesis::Null => estimate_type1_error(&cfg, &options, alpha),
            Hypothesis::Alternative => estimate_power(&cfg, &options, alpha),
        }
        .map_err(|e| CliError::Config(format!("scenario `{}`: {e}", s.id)))?;
        rows.push(SimRow {
            scenario: s.id.clone(),
            hypothesis: match s.hypothesis {
                Hypothesis::Null => "null",
                Hypothesis::Alternative => "alternative",
            },
            n_subjects: cfg.n_subjects,
            exposure_correlation: cfg.exposure_correlation,
            master_seed: cfg.master_seed,
            alpha,
            replicates: est.replicates,
            failures: est.failures,
            valid: est.valid,
            rejections: est.rejections,
            rate: est.rate,
            ci_lower: est.ci_lower,
            ci_upper: est.ci_upper,
            monte_carlo_se: est.monte_carlo_se,
            naive_rate: est.naive_rate,
            overlap_fraction: est.overlap_fraction,
            ks_statistic: est.ks_statistic,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: prov.config_sha256.clone(),
        });
    }

    let mut human = banner(&prov);
    let table: Vec<[String; 7]> = std::iter::once([
        "scenario".to_owned(),
        "hypothesis".to_owned(),
        "rate [95% CI]".to_owned(),
        "naive rate".to_owned(),
        "CI overlap".to_owned(),
        "failures".to_owned(),
        "valid".to_owned(),
    ])
    .chain(rows.iter().map(|r| {
        [
            r.scenario.clone(),
            r.hypothesis.to_owned(),
            format!("{:.4} [{:.4}, {:.4}]", r.rate, r.ci_lower, r.ci_upper),
            r.naive_rate.map_or_else(String::new, |v| format!("{v:.4}")),
            format!("{:.3}", r.overlap_fraction),
            format!("{}/{}", r.failures, r.replicates),
            if r.valid { "yes".to_owned() } else { "no".to_owned() },
        ]
    }))
    .collect();
    human.push_str(&align(&table));
    let file = match config.output_format {
        OutputFormat::Human => human.clone(),
        OutputFormat::Machine => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| CliError::Config(e.to_string()))?;
            }
            String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
        }
    };
    Ok(RunOutput {
        stdout: human,
        file,
        converged: true,
    })
}
