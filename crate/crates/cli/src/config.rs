use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dupcox::inference::CovarianceKind;
use dupcox::{CompareOptions, ExposureSpec, FitOptions, Schema, SimConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Compare,
    Fit,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Compare => "compare",
            Command::Fit => "fit",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Human,
    Machine,
}

/// One exposure block or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exposures {
    One(ExposureSpec),
    Many(Vec<ExposureSpec>),
}

impl Exposures {
    pub fn list(&self) -> Vec<&ExposureSpec> {
        match self {
            Exposures::One(s) => vec![s],
            Exposures::Many(v) => v.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub confidence: f64,
    pub covariance: CovarianceKind,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            covariance: CovarianceKind::Robust,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Equal true coefficients are enforced and the result is a type-I error.
    Null,
    #[default]
    Alternative,
}

/// Simulation scenario. The master seed falls back to the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub hypothesis: Hypothesis,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub n_subjects: usize,
    pub exposure_correlation: f64,
    pub true_beta: Vec<f64>,
    #[serde(default)]
    pub covariate_effects: Vec<f64>,
    #[serde(default)]
    pub weibull_shape: Option<f64>,
    #[serde(default)]
    pub weibull_scale: Option<f64>,
    pub censoring_rate: f64,
    #[serde(default)]
    pub n_strata: Option<usize>,
    pub replicate_count: usize,
    #[serde(default)]
    pub master_seed: Option<u64>,
}

impl Scenario {
    pub fn sim_config(&self, run_seed: Option<u64>) -> Result<SimConfig, CliError> {
        let master_seed = self.master_seed.or(run_seed).ok_or_else(|| {
            CliError::Config(format!("scenario `{}` has no master_seed and the run has no seed", self.id))
        })?;
        let config = SimConfig {
            n_subjects: self.n_subjects,
            exposure_correlation: self.exposure_correlation,
            true_beta: self.true_beta.clone(),
            covariate_effects: self.covariate_effects.clone(),
            weibull_shape: self.weibull_shape.unwrap_or(1.0),
            weibull_scale: self.weibull_scale.unwrap_or(1.0),
            censoring_rate: self.censoring_rate,
            n_strata: self.n_strata.unwrap_or(1),
            replicate_count: self.replicate_count,
            master_seed,
        };
        config
            .check()
            .map_err(|e| CliError::Config(format!("scenario `{}`: {e}", self.id)))?;
        Ok(config)
    }
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub scenario: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the subcommand when given.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub output_format: OutputFormat,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub schema: Option<Schema>,
    #[serde(default)]
    pub exposure: Option<Exposures>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.input, &mut config.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// SHA-256 of the effective configuration, after command-line
    /// overrides. The output destination does not count.
    pub fn hash(&self) -> String {
        let mut effective = self.clone();
        effective.output = None;
        let canonical = serde_json::to_vec(&effective).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn compare_options(&self) -> CompareOptions {
        CompareOptions {
            fit: self.fit.clone(),
            confidence: self.inference.confidence,
            covariance: self.inference.covariance,
        }
    }

    pub fn check_for(&self, command: Command) -> Result<(), CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config is for `{}` but `{}` was invoked",
                    c.name(),
                    command.name()
                )));
            }
        }
        self.fit.check().map_err(|e| CliError::Config(e.to_string()))?;
        let conf = self.inference.confidence;
        if !(conf > 0.0 && conf < 1.0) {
            return Err(CliError::Config(format!("confidence must be in (0, 1), found {conf}")));
        }
        match command {
            Command::Compare | Command::Fit => {
                if self.input.is_none() {
                    return Err(CliError::Config("`input` is required".to_owned()));
                }
                let schema = self
                    .schema
                    .as_ref()
                    .ok_or_else(|| CliError::Config("a [schema] block is required".to_owned()))?;
                schema.check().map_err(|e| CliError::Config(e.to_string()))?;
                let exposures = self
                    .exposure
                    .as_ref()
                    .ok_or_else(|| CliError::Config("an [exposure] block is required".to_owned()))?;
                let list = exposures.list();
                if list.is_empty() {
                    return Err(CliError::Config("the exposure list is empty".to_owned()));
                }
                for spec in list {
                    spec.check().map_err(|e| CliError::Config(e.to_string()))?;
                    for col in &spec.source_columns {
                        if schema.exposure_index(col).is_none() {
                            return Err(CliError::Config(format!(
                                "exposure column `{col}` is not declared in schema.exposure_columns"
                            )));
                        }
                    }
                }
            }
            Command::Simulate => {
                let sim = self
                    .simulation
                    .as_ref()
                    .ok_or_else(|| CliError::Config("a [simulation] block is required".to_owned()))?;
                if sim.scenario.is_empty() {
                    return Err(CliError::Config("no [[simulation.scenario]] entries".to_owned()));
                }
                for s in &sim.scenario {
                    let alpha = s.alpha.unwrap_or(sim.alpha);
                    if !(alpha > 0.0 && alpha <= 1.0) {
                        return Err(CliError::Config(format!("scenario `{}`: alpha must be in (0, 1]", s.id)));
                    }
                    s.sim_config(self.seed)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMPARE: &str = r#"
command = "compare"
input = "cohort.csv"
seed = 3

[schema]
id_column = "id"
exit_column = "time"
event_column = "event"
exposure_columns = ["A1", "A2"]
covariate_columns = ["L1"]

[exposure]
kind = "continuous"
source_columns = ["A1", "A2"]
increment = "p10_p90"

[fit]
tie_method = "breslow"
"#;

    #[test]
    fn parses_single_exposure_block() {
        let c = RunConfig::parse(COMPARE).unwrap();
        assert_eq!(c.command, Some(Command::Compare));
        assert_eq!(c.exposure.as_ref().unwrap().list().len(), 1);
        assert_eq!(c.fit.tie_method, dupcox::TieMethod::Breslow);
        c.check_for(Command::Compare).unwrap();
        assert!(c.check_for(Command::Simulate).is_err());
    }

    #[test]
    fn parses_exposure_list() {
        let text = COMPARE.replace("[exposure]", "[[exposure]]")
            + "\n[[exposure]]\nkind = \"categorical\"\nsource_columns = [\"A1\", \"A2\"]\nn_levels = 5\nfrom_quantiles = true\n";
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.exposure.unwrap().list().len(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse(&format!("{COMPARE}\nbogus = 1\n")).is_err());
        assert!(RunConfig::parse(&COMPARE.replace("tie_method", "ties")).is_err());
    }

    #[test]
    fn undeclared_exposure_names_the_column() {
        let c = RunConfig::parse(&COMPARE.replace("source_columns = [\"A1\", \"A2\"]", "source_columns = [\"A1\", \"A9\"]")).unwrap();
        let err = c.check_for(Command::Compare).unwrap_err();
        assert!(err.to_string().contains("A9"));
    }

    #[test]
    fn hash_tracks_effective_config() {
        let a = RunConfig::parse(COMPARE).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output = Some("elsewhere.json".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = Some(4);
        assert_ne!(a.hash(), b.hash());
    }
}
