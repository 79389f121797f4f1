//! Duplicated (row-bound) datasets and numeric design matrices.
//!
//! The original data are copied once per compared exposure. Copy `j` carries
//! exposure `j` in a shared set of `Exposures` terms and an `A_type` label `j`.
//! The design then holds main terms, interactions of every term with the
//! non-reference `A_type` labels, and a stratum key that includes `A_type`.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{stratum_groups, Dataset};

/// Base name of the synthesized exposure terms.
pub const EXPOSURE_TERM: &str = "Exposures";
/// Base name of the exposure-type label.
pub const TYPE_TERM: &str = "A_type";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("exposure spec: {0}")]
    Spec(String),
    #[error("exposure column `{0}` is not declared in the dataset schema")]
    UnknownExposure(String),
    #[error("exposure `{exposure}` has {distinct} distinct value(s), fewer than the {levels} requested categories")]
    TooFewDistinct {
        exposure: String,
        distinct: usize,
        levels: usize,
    },
    #[error("exposure `{exposure}`: value {value} is not a category label in 1..={levels}")]
    UnseenLabel {
        exposure: String,
        value: f64,
        levels: usize,
    },
    #[error("exposure `{exposure}`: value {value} is not dichotomous (0 or 1)")]
    NotDichotomous { exposure: String, value: f64 },
    #[error("dataset is empty")]
    Empty,
    #[error("no stratum contains an event")]
    NoInformativeStrata,
}

impl DesignError {
    fn named(self, name: &str) -> Self {
        match self {
            DesignError::TooFewDistinct {
                distinct, levels, ..
            } => DesignError::TooFewDistinct {
                exposure: name.to_owned(),
                distinct,
                levels,
            },
            DesignError::UnseenLabel { value, levels, .. } => DesignError::UnseenLabel {
                exposure: name.to_owned(),
                value,
                levels,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    Continuous,
    Dichotomous,
    Categorical,
    Trend,
}

/// How a per-unit coefficient is scaled into a reported hazard ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Increment {
    /// One unit of the exposure.
    #[default]
    Unit,
    /// A fixed number of exposure units.
    Fixed(f64),
    /// Difference between the 10th and 90th percentile of each exposure.
    P10P90,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureSpec {
    pub kind: ExposureKind,
    /// Exposures to compare; the first is the reference `A_type`.
    pub source_columns: Vec<String>,
    /// Number of categories (categorical and trend kinds).
    #[serde(default)]
    pub n_levels: Option<usize>,
    /// Reference category for dummy coding, default 1.
    #[serde(default)]
    pub reference_level: Option<usize>,
    /// Categorical kind only: derive categories from quantiles of the raw
    /// values instead of reading labels 1..=k from the data.
    #[serde(default)]
    pub from_quantiles: bool,
    #[serde(default)]
    pub increment: Increment,
}

impl ExposureSpec {
    pub fn continuous(columns: &[&str]) -> Self {
        Self::new(ExposureKind::Continuous, columns, None)
    }

    pub fn dichotomous(columns: &[&str]) -> Self {
        Self::new(ExposureKind::Dichotomous, columns, None)
    }

    /// Categorical comparison over quantile categories of the raw columns.
    pub fn quantile_categories(columns: &[&str], levels: usize) -> Self {
        let mut spec = Self::new(ExposureKind::Categorical, columns, Some(levels));
        spec.from_quantiles = true;
        spec
    }

    pub fn trend(columns: &[&str], levels: usize) -> Self {
        Self::new(ExposureKind::Trend, columns, Some(levels))
    }

    pub fn new(kind: ExposureKind, columns: &[&str], levels: Option<usize>) -> Self {
        Self {
            kind,
            source_columns: columns.iter().map(|c| (*c).to_owned()).collect(),
            n_levels: levels,
            reference_level: None,
            from_quantiles: false,
            increment: Increment::Unit,
        }
    }

    pub fn reference(&self) -> usize {
        self.reference_level.unwrap_or(1)
    }

    pub fn check(&self) -> Result<(), DesignError> {
        let m = self.source_columns.len();
        if m < 2 {
            return Err(DesignError::Spec(format!(
                "at least two exposures must be compared, found {m}"
            )));
        }
        match (self.kind, self.n_levels) {
            (ExposureKind::Categorical | ExposureKind::Trend, None) => {
                return Err(DesignError::Spec("n_levels is required for categorical and trend exposures".into()));
            }
            (ExposureKind::Categorical | ExposureKind::Trend, Some(k)) if k < 2 => {
                return Err(DesignError::Spec(format!("n_levels must be at least 2, found {k}")));
            }
            _ => {}
        }
        if let Some(k) = self.n_levels {
            let r = self.reference();
            if r == 0 || r > k {
                return Err(DesignError::Spec(format!(
                    "reference level {r} is outside 1..={k}"
                )));
            }
        }
        if let Increment::Fixed(v) = self.increment {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DesignError::Spec(format!("increment must be positive, found {v}")));
            }
        }
        Ok(())
    }

    /// Names of the exposure terms each copy carries.
    pub fn term_names(&self) -> Vec<String> {
        match self.kind {
            ExposureKind::Categorical => {
                let k = self.n_levels.unwrap_or(2);
                (1..=k)
                    .filter(|&c| c != self.reference())
                    .map(|c| format!("{EXPOSURE_TERM}{c}"))
                    .collect()
            }
            _ => vec![EXPOSURE_TERM.to_owned()],
        }
    }
}

/// Result of [`categorize_quantiles`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    /// Category of each value, in 1..=k.
    pub categories: Vec<usize>,
    /// Upper bounds of categories 1..k-1.
    pub cut_points: Vec<f64>,
    pub bin_sizes: Vec<usize>,
}

impl Quantiles {
    /// True when ties pushed bin sizes further apart than one.
    pub fn unbalanced(&self) -> bool {
        let max = self.bin_sizes.iter().max().copied().unwrap_or(0);
        let min = self.bin_sizes.iter().min().copied().unwrap_or(0);
        max - min > 1
    }
}

/// Empirical-quantile categories: `v` falls in category `c` iff
/// `q((c-1)/k) < v <= q(c/k)`, with the lowest category closed below and
/// `q(p)` the inverse empirical distribution function (smallest order statistic
/// whose empirical CDF reaches `p`).
pub fn categorize_quantiles(values: &[f64], k: usize) -> Result<Quantiles, DesignError> {
    if k < 2 {
        return Err(DesignError::Spec(format!("at least 2 categories required, found {k}")));
    }
    if values.is_empty() {
        return Err(DesignError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(DesignError::TooFewDistinct {
            exposure: String::new(),
            distinct: distinct.len(),
            levels: k,
        });
    }
    let n = sorted.len();
    let cut_points: Vec<f64> = (1..k)
        .map(|c| {
            // ceil(n * c / k) as a 1-based order statistic
            let rank = (n * c).div_ceil(k);
            sorted[rank - 1]
        })
        .collect();
    let categories: Vec<usize> = values
        .iter()
        .map(|&v| cut_points.iter().position(|&q| v <= q).map_or(k, |c| c + 1))
        .collect();
    let mut bin_sizes = vec![0; k];
    for &c in &categories {
        bin_sizes[c - 1] += 1;
    }
    Ok(Quantiles {
        categories,
        cut_points,
        bin_sizes,
    })
}

/// Indicator columns for every level except `reference`, named
/// `Exposures<c>`.
pub fn dummy_code(
    categories: &[usize],
    reference: usize,
    k: usize,
) -> Result<(Vec<String>, Vec<Vec<f64>>), DesignError> {
    if reference == 0 || reference > k {
        return Err(DesignError::Spec(format!("reference level {reference} is outside 1..={k}")));
    }
    if let Some(&bad) = categories.iter().find(|&&c| c == 0 || c > k) {
        return Err(DesignError::UnseenLabel {
            exposure: String::new(),
            value: bad as f64,
            levels: k,
        });
    }
    let levels: Vec<usize> = (1..=k).filter(|&c| c != reference).collect();
    let names = levels.iter().map(|c| format!("{EXPOSURE_TERM}{c}")).collect();
    let columns = levels
        .iter()
        .map(|&level| {
            categories
                .iter()
                .map(|&c| if c == level { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    Ok((names, columns))
}

/// Replaces each category by the median raw value among rows in that category.
pub fn trend_scores(categories: &[usize], raw_values: &[f64], k: usize) -> Vec<f64> {
    let medians = category_medians(categories, raw_values, k);
    categories.iter().map(|&c| medians[c - 1]).collect()
}

fn category_medians(categories: &[usize], raw_values: &[f64], k: usize) -> Vec<f64> {
    let mut groups = vec![Vec::new(); k];
    for (&c, &v) in categories.iter().zip(raw_values) {
        groups[c - 1].push(v);
    }
    groups.into_iter().map(|mut g| median(&mut g)).collect()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Linear-interpolation percentile (the common "type 7" definition).
pub(crate) fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// How one compared exposure was turned into model terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureSummary {
    pub column: String,
    /// Quantile cut points, when categories were derived from raw values.
    pub cut_points: Option<Vec<f64>>,
    pub bin_sizes: Option<Vec<usize>>,
    /// Trend kind: score assigned to each category.
    pub category_scores: Option<Vec<f64>>,
    /// Exposure units per reported hazard-ratio increment.
    pub increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentedRow {
    pub subject_id: String,
    pub entry_time: f64,
    pub exit_time: f64,
    pub event: bool,
    /// Zero-based index into the compared exposures.
    pub a_type: usize,
    /// Aligned with [`AugmentedDataset::term_names`].
    pub exposure_terms: Vec<f64>,
    pub covariates: Vec<f64>,
    pub strata: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentedDataset {
    pub rows: Vec<AugmentedRow>,
    pub term_names: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Source column behind each `A_type` label.
    pub type_labels: Vec<String>,
    pub exposures: Vec<ExposureSummary>,
    pub warnings: Vec<String>,
    pub original_rows: usize,
}

impl AugmentedDataset {
    pub fn copies(&self) -> usize {
        self.type_labels.len()
    }
}

struct ExposureTerms {
    columns: Vec<Vec<f64>>,
    summary: ExposureSummary,
    warning: Option<String>,
}

fn exposure_terms(dataset: &Dataset, spec: &ExposureSpec, name: &str) -> Result<ExposureTerms, DesignError> {
    let raw = dataset
        .exposure_column(name)
        .ok_or_else(|| DesignError::UnknownExposure(name.to_owned()))?;
    if raw.is_empty() {
        return Err(DesignError::Empty);
    }
    let increment = match spec.increment {
        Increment::Unit => 1.0,
        Increment::Fixed(v) => v,
        Increment::P10P90 => percentile(&raw, 0.9) - percentile(&raw, 0.1),
    };
    let mut summary = ExposureSummary {
        column: name.to_owned(),
        cut_points: None,
        bin_sizes: None,
        category_scores: None,
        increment,
    };
    let mut warning = None;
    let k = spec.n_levels.unwrap_or(0);
    let mut quantiles = |summary: &mut ExposureSummary| -> Result<Vec<usize>, DesignError> {
        let q = categorize_quantiles(&raw, k).map_err(|e| e.named(name))?;
        if q.unbalanced() {
            let msg = format!("exposure `{name}`: tied values give unbalanced bin sizes {:?}", q.bin_sizes);
            log::warn!("{msg}");
            warning = Some(msg);
        }
        summary.cut_points = Some(q.cut_points);
        summary.bin_sizes = Some(q.bin_sizes);
        Ok(q.categories)
    };
    let columns = match spec.kind {
        ExposureKind::Continuous => vec![raw],
        ExposureKind::Dichotomous => {
            if let Some(&v) = raw.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(DesignError::NotDichotomous {
                    exposure: name.to_owned(),
                    value: v,
                });
            }
            vec![raw]
        }
        ExposureKind::Categorical => {
            let categories = if spec.from_quantiles {
                quantiles(&mut summary)?
            } else {
                raw.iter()
                    .map(|&v| {
                        if v.fract() == 0.0 && v >= 1.0 && v <= k as f64 {
                            Ok(v as usize)
                        } else {
                            Err(DesignError::UnseenLabel {
                                exposure: name.to_owned(),
                                value: v,
                                levels: k,
                            })
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            dummy_code(&categories, spec.reference(), k)
                .map_err(|e| e.named(name))?
                .1
        }
        ExposureKind::Trend => {
            let categories = quantiles(&mut summary)?;
            summary.category_scores = Some(category_medians(&categories, &raw, k));
            vec![trend_scores(&categories, &raw, k)]
        }
    };
    Ok(ExposureTerms {
        columns,
        summary,
        warning,
    })
}

/// Row-binds one copy of the dataset per compared exposure.
///
/// Copy `j` takes its exposure terms from `spec.source_columns[j]`; the
/// original exposure columns are not carried over. Categories are derived per
/// exposure from its own distribution.
pub fn duplicate_augment(dataset: &Dataset, spec: &ExposureSpec) -> Result<AugmentedDataset, DesignError> {
    spec.check()?;
    let per_exposure = spec
        .source_columns
        .iter()
        .map(|name| exposure_terms(dataset, spec, name))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(dataset.len() * per_exposure.len());
    for (a_type, terms) in per_exposure.iter().enumerate() {
        for (i, row) in dataset.rows().iter().enumerate() {
            rows.push(AugmentedRow {
                subject_id: row.subject_id.clone(),
                entry_time: row.entry_time,
                exit_time: row.exit_time,
                event: row.event,
                a_type,
                exposure_terms: terms.columns.iter().map(|col| col[i]).collect(),
                covariates: row.covariates.clone(),
                strata: row.strata.clone(),
            });
        }
    }
    let mut warnings = Vec::new();
    let mut exposures = Vec::new();
    for terms in per_exposure {
        warnings.extend(terms.warning);
        exposures.push(terms.summary);
    }
    Ok(AugmentedDataset {
        rows,
        term_names: spec.term_names(),
        covariate_names: dataset.schema().covariate_columns.clone(),
        type_labels: spec.source_columns.clone(),
        exposures,
        warnings,
        original_rows: dataset.len(),
    })
}

/// Dense design for a stratified Cox fit, with the survival and clustering
/// columns that travel with it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignMatrix {
    /// Rows are observations, columns follow `column_names`.
    pub x: Array2<f64>,
    pub column_names: Vec<String>,
    pub exposure_main_columns: Vec<String>,
    pub covariate_main_columns: Vec<String>,
    pub interaction_columns: Vec<String>,
    pub covariate_interaction_columns: Vec<String>,
    pub entry: Vec<f64>,
    pub exit: Vec<f64>,
    pub event: Vec<bool>,
    /// Stratum index per row into `strata_labels`.
    pub strata: Vec<usize>,
    pub strata_labels: Vec<String>,
    /// Cluster index per row into `cluster_labels`.
    pub cluster: Vec<usize>,
    pub cluster_labels: Vec<String>,
    /// Zero-based `A_type` per row; all zero for a single-exposure design.
    pub a_type: Vec<usize>,
    pub type_labels: Vec<String>,
}

impl DesignMatrix {
    /// Bare design with one cluster per row and no term metadata. Intended
    /// for direct use of the Cox engine.
    pub fn from_parts(
        x: Array2<f64>,
        column_names: Vec<String>,
        entry: Vec<f64>,
        exit: Vec<f64>,
        event: Vec<bool>,
        strata: Vec<usize>,
    ) -> Self {
        let n = x.nrows();
        assert_eq!(column_names.len(), x.ncols(), "one name per column");
        assert!(entry.len() == n && exit.len() == n && event.len() == n && strata.len() == n);
        let n_strata = strata.iter().max().map_or(0, |s| s + 1);
        Self {
            x,
            column_names,
            exposure_main_columns: Vec::new(),
            covariate_main_columns: Vec::new(),
            interaction_columns: Vec::new(),
            covariate_interaction_columns: Vec::new(),
            entry,
            exit,
            event,
            strata,
            strata_labels: (0..n_strata).map(|s| s.to_string()).collect(),
            cluster: (0..n).collect(),
            cluster_labels: (0..n).map(|i| i.to_string()).collect(),
            a_type: vec![0; n],
            type_labels: vec![String::new()],
        }
    }

    pub fn with_clusters(mut self, cluster: Vec<usize>) -> Self {
        assert_eq!(cluster.len(), self.n_rows());
        let n_clusters = cluster.iter().max().map_or(0, |c| c + 1);
        self.cluster = cluster;
        self.cluster_labels = (0..n_clusters).map(|c| c.to_string()).collect();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_strata(&self) -> usize {
        self.strata_labels.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Keeps only the given rows; stratum and cluster indices are preserved.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = self.clone();
        out.x = self.x.select(ndarray::Axis(0), rows);
        out.entry = rows.iter().map(|&i| self.entry[i]).collect();
        out.exit = rows.iter().map(|&i| self.exit[i]).collect();
        out.event = rows.iter().map(|&i| self.event[i]).collect();
        out.strata = rows.iter().map(|&i| self.strata[i]).collect();
        out.cluster = rows.iter().map(|&i| self.cluster[i]).collect();
        out.a_type = rows.iter().map(|&i| self.a_type[i]).collect();
        out
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut out = self.clone();
        out.x = self.x.select(ndarray::Axis(1), cols);
        out.column_names = cols.iter().map(|&j| self.column_names[j].clone()).collect();
        let keep = |names: &[String]| -> Vec<String> {
            names
                .iter()
                .filter(|n| out.column_names.contains(n))
                .cloned()
                .collect()
        };
        out.exposure_main_columns = keep(&self.exposure_main_columns);
        out.covariate_main_columns = keep(&self.covariate_main_columns);
        out.interaction_columns = keep(&self.interaction_columns);
        out.covariate_interaction_columns = keep(&self.covariate_interaction_columns);
        out
    }

    /// Applies `f` to every entry and exit time.
    pub fn map_times(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.entry = self.entry.iter().map(|&t| f(t)).collect();
        out.exit = self.exit.iter().map(|&t| f(t)).collect();
        out
    }

    /// Number of strata containing at least one event.
    pub fn informative_strata(&self) -> usize {
        let mut has_event = vec![false; self.n_strata()];
        for (&s, &e) in self.strata.iter().zip(&self.event) {
            has_event[s] |= e;
        }
        has_event.into_iter().filter(|&b| b).count()
    }
}

pub fn interaction_name(term: &str, a_type: usize) -> String {
    format!("{term}:{TYPE_TERM}{}", a_type + 1)
}

fn index_labels<'a>(keys: impl Iterator<Item = String> + 'a) -> (Vec<usize>, Vec<String>) {
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let ids = keys
        .map(|key| {
            *lookup.entry(key.clone()).or_insert_with(|| {
                labels.push(key);
                labels.len() - 1
            })
        })
        .collect();
    (ids, labels)
}

fn stratum_label(strata: &[String], a_type: Option<usize>) -> String {
    let mut parts: Vec<String> = strata.to_vec();
    if let Some(t) = a_type {
        parts.push(format!("{TYPE_TERM}{}", t + 1));
    }
    parts.join("/")
}

/// Builds the interaction design for an augmented dataset.
///
/// Column order: exposure main terms, covariate main terms, exposure terms
/// interacted with each non-reference `A_type`, covariates interacted with
/// each non-reference `A_type`. `A_type` has no main-effect column because
/// it is part of the stratum key.
pub fn build_design_matrix(aug: &AugmentedDataset, spec: &ExposureSpec) -> Result<DesignMatrix, DesignError> {
    spec.check()?;
    if aug.rows.is_empty() {
        return Err(DesignError::Empty);
    }
    let m = aug.copies();
    let n_terms = aug.term_names.len();
    let n_cov = aug.covariate_names.len();

    let mut column_names: Vec<String> = aug.term_names.clone();
    column_names.extend(aug.covariate_names.iter().cloned());
    let mut interaction_columns = Vec::new();
    for j in 1..m {
        interaction_columns.extend(aug.term_names.iter().map(|t| interaction_name(t, j)));
    }
    let mut covariate_interaction_columns = Vec::new();
    for j in 1..m {
        covariate_interaction_columns.extend(aug.covariate_names.iter().map(|c| interaction_name(c, j)));
    }
    column_names.extend(interaction_columns.iter().cloned());
    column_names.extend(covariate_interaction_columns.iter().cloned());

    let p = column_names.len();
    let n = aug.rows.len();
    let mut x = Array2::<f64>::zeros((n, p));
    let exp_inter_start = n_terms + n_cov;
    let cov_inter_start = exp_inter_start + (m - 1) * n_terms;
    for (i, row) in aug.rows.iter().enumerate() {
        for (t, &v) in row.exposure_terms.iter().enumerate() {
            x[[i, t]] = v;
        }
        for (c, &v) in row.covariates.iter().enumerate() {
            x[[i, n_terms + c]] = v;
        }
        if row.a_type > 0 {
            let block = row.a_type - 1;
            for (t, &v) in row.exposure_terms.iter().enumerate() {
                x[[i, exp_inter_start + block * n_terms + t]] = v;
            }
            for (c, &v) in row.covariates.iter().enumerate() {
                x[[i, cov_inter_start + block * n_cov + c]] = v;
            }
        }
    }

    let (strata, strata_labels) =
        index_labels(aug.rows.iter().map(|r| stratum_label(&r.strata, Some(r.a_type))));
    let (cluster, cluster_labels) = index_labels(aug.rows.iter().map(|r| r.subject_id.clone()));
    let design = DesignMatrix {
        x,
        exposure_main_columns: aug.term_names.clone(),
        covariate_main_columns: aug.covariate_names.clone(),
        interaction_columns,
        covariate_interaction_columns,
        column_names,
        entry: aug.rows.iter().map(|r| r.entry_time).collect(),
        exit: aug.rows.iter().map(|r| r.exit_time).collect(),
        event: aug.rows.iter().map(|r| r.event).collect(),
        strata,
        strata_labels,
        cluster,
        cluster_labels,
        a_type: aug.rows.iter().map(|r| r.a_type).collect(),
        type_labels: aug.type_labels.clone(),
    };
    if design.informative_strata() == 0 {
        return Err(DesignError::NoInformativeStrata);
    }
    Ok(design)
}

/// Design for the separate analysis of one exposure on the original data:
/// that exposure's terms plus the covariates, stratified by the original
/// strata only.
pub fn separate_design(dataset: &Dataset, spec: &ExposureSpec, exposure: usize) -> Result<DesignMatrix, DesignError> {
    spec.check()?;
    let name = spec
        .source_columns
        .get(exposure)
        .ok_or_else(|| DesignError::Spec(format!("exposure index {exposure} out of range")))?;
    if dataset.is_empty() {
        return Err(DesignError::Empty);
    }
    let terms = exposure_terms(dataset, spec, name)?;
    let term_names = spec.term_names();
    let covariate_names = dataset.schema().covariate_columns.clone();
    let n = dataset.len();
    let p = term_names.len() + covariate_names.len();
    let mut x = Array2::<f64>::zeros((n, p));
    for (i, row) in dataset.rows().iter().enumerate() {
        for (t, col) in terms.columns.iter().enumerate() {
            x[[i, t]] = col[i];
        }
        for (c, &v) in row.covariates.iter().enumerate() {
            x[[i, term_names.len() + c]] = v;
        }
    }
    let (strata, labels) = stratum_groups(dataset);
    let (cluster, cluster_labels) = index_labels(dataset.rows().iter().map(|r| r.subject_id.clone()));
    let mut column_names = term_names.clone();
    column_names.extend(covariate_names.iter().cloned());
    let design = DesignMatrix {
        x,
        column_names,
        exposure_main_columns: term_names,
        covariate_main_columns: covariate_names,
        interaction_columns: Vec::new(),
        covariate_interaction_columns: Vec::new(),
        entry: dataset.rows().iter().map(|r| r.entry_time).collect(),
        exit: dataset.rows().iter().map(|r| r.exit_time).collect(),
        event: dataset.rows().iter().map(|r| r.event).collect(),
        strata,
        strata_labels: labels.iter().map(|l| stratum_label(l, None)).collect(),
        cluster,
        cluster_labels,
        a_type: vec![0; n],
        type_labels: vec![name.clone()],
    };
    if design.informative_strata() == 0 {
        return Err(DesignError::NoInformativeStrata);
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_dataset, CohortRow, Schema};

    /// Sort-and-split oracle: with n divisible by k, category c holds the
    /// sorted values at ranks ((c-1)n/k, cn/k].
    fn sort_and_split(values: &[f64], k: usize) -> Vec<usize> {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut out = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            out[i] = rank * k / n + 1;
        }
        out
    }

    #[test]
    fn quintiles_of_one_to_ten() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let q = categorize_quantiles(&values, 5).unwrap();
        assert_eq!(q.categories, sort_and_split(&values, 5));
        assert_eq!(q.categories, vec![1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        assert_eq!(q.cut_points, vec![2.0, 4.0, 6.0, 8.0]);
        assert!(!q.unbalanced());
    }

    #[test]
    fn quantiles_follow_sort_and_split_on_shuffled_input() {
        let values = [7.5, -1.0, 3.25, 0.5, 9.0, 2.0, 4.0, 8.0, 6.0, 1.5, 5.0, 11.0];
        for k in [2, 3, 4, 6] {
            let q = categorize_quantiles(&values, k).unwrap();
            assert_eq!(q.categories, sort_and_split(&values, k), "k = {k}");
        }
    }

    #[test]
    fn one_value_per_bin() {
        let q = categorize_quantiles(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(q.categories, vec![1, 2, 3, 4]);
    }

    #[test]
    fn constant_values_cannot_be_split() {
        let err = categorize_quantiles(&[3.0; 6], 2).unwrap_err();
        assert!(matches!(err, DesignError::TooFewDistinct { distinct: 1, levels: 2, .. }));
    }

    #[test]
    fn heavy_ties_are_flagged_unbalanced() {
        let q = categorize_quantiles(&[1.0, 1.0, 1.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(q.bin_sizes, vec![4, 0, 2]);
        assert!(q.unbalanced());
    }

    #[test]
    fn dummy_coding_matches_figure2_row() {
        // ID 1 of the second figure: A in level 2 of 3.
        let (names, cols) = dummy_code(&[2, 1, 3, 1], 1, 3).unwrap();
        assert_eq!(names, vec!["Exposures2", "Exposures3"]);
        assert_eq!((cols[0][0], cols[1][0]), (1.0, 0.0));
        assert_eq!((cols[0][1], cols[1][1]), (0.0, 0.0));
        assert_eq!((cols[0][2], cols[1][2]), (0.0, 1.0));
    }

    #[test]
    fn dummy_coding_enumerates_five_levels() {
        let cats = [1, 2, 3, 4, 5];
        let (names, cols) = dummy_code(&cats, 1, 5).unwrap();
        assert_eq!(names.len(), 4);
        for (i, &c) in cats.iter().enumerate() {
            let row: Vec<f64> = cols.iter().map(|col| col[i]).collect();
            let expected: Vec<f64> = (2..=5).map(|l| f64::from(u8::from(l == c))).collect();
            assert_eq!(row, expected, "level {c}");
        }
        assert_eq!(cols.iter().map(|c| c[4]).collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dummy_coding_rejects_unknown_label() {
        assert!(matches!(dummy_code(&[1, 4], 1, 3), Err(DesignError::UnseenLabel { .. })));
    }

    #[test]
    fn trend_scores_are_bin_medians() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let q = categorize_quantiles(&values, 5).unwrap();
        let scores = trend_scores(&q.categories, &values, 5);
        assert_eq!(scores, vec![1.5, 1.5, 3.5, 3.5, 5.5, 5.5, 7.5, 7.5, 9.5, 9.5]);
    }

    fn figure1() -> Dataset {
        let schema = Schema {
            id_column: "ID".into(),
            entry_column: None,
            exit_column: "Time".into(),
            event_column: "Y".into(),
            exposure_columns: vec!["A".into(), "A'".into()],
            covariate_columns: vec!["L1".into()],
            strata_columns: vec![],
        };
        parse_dataset(
            "ID,A,A',Y,Time,L1\n1,1,1,1,20,1\n2,0,1,0,19,1\n3,1,1,0,17,0\n4,0,0,0,21,0\n",
            &schema,
        )
        .unwrap()
    }

    #[test]
    fn figure1_duplication() {
        let spec = ExposureSpec::dichotomous(&["A", "A'"]);
        let aug = duplicate_augment(&figure1(), &spec).unwrap();
        assert_eq!(aug.rows.len(), 8);
        let subject2: Vec<_> = aug.rows.iter().filter(|r| r.subject_id == "2").collect();
        assert_eq!(subject2.len(), 2);
        assert_eq!((subject2[0].a_type, subject2[0].exposure_terms[0]), (0, 0.0));
        assert_eq!((subject2[1].a_type, subject2[1].exposure_terms[0]), (1, 1.0));
        for pair in aug.rows[..4].iter().zip(&aug.rows[4..]) {
            assert_eq!(pair.0.exit_time, pair.1.exit_time);
            assert_eq!(pair.0.event, pair.1.event);
            assert_eq!(pair.0.covariates, pair.1.covariates);
        }
    }

    #[test]
    fn identical_exposures_differ_only_in_type() {
        let ds = figure1();
        let spec = ExposureSpec::dichotomous(&["A", "A"]);
        let aug = duplicate_augment(&ds, &spec).unwrap();
        for (a, b) in aug.rows[..4].iter().zip(&aug.rows[4..]) {
            let mut b = b.clone();
            assert_ne!(a.a_type, b.a_type);
            b.a_type = a.a_type;
            assert_eq!(a, &b);
        }
    }

    fn five_rows_three_exposures() -> Dataset {
        let schema = Schema {
            id_column: "id".into(),
            entry_column: None,
            exit_column: "t".into(),
            event_column: "d".into(),
            exposure_columns: vec!["e1".into(), "e2".into(), "e3".into()],
            covariate_columns: vec![],
            strata_columns: vec![],
        };
        let rows = (0..5)
            .map(|i| CohortRow {
                subject_id: format!("s{i}"),
                entry_time: 0.0,
                exit_time: 1.0 + i as f64,
                event: i % 2 == 0,
                exposures: vec![i as f64, (i * i) as f64, -(i as f64)],
                covariates: vec![],
                strata: vec![],
            })
            .collect();
        Dataset::new(schema, rows).unwrap()
    }

    #[test]
    fn three_exposures_triple_rows() {
        let ds = five_rows_three_exposures();
        let spec = ExposureSpec::continuous(&["e1", "e2", "e3"]);
        let aug = duplicate_augment(&ds, &spec).unwrap();
        assert_eq!(aug.rows.len(), 15);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &aug.rows {
            *counts.entry(&r.subject_id).or_default() += 1;
        }
        assert!(counts.values().all(|&c| c == 3));
        assert_eq!(counts.len(), 5);

        let design = build_design_matrix(&aug, &spec).unwrap();
        assert_eq!(
            design.interaction_columns,
            vec!["Exposures:A_type2", "Exposures:A_type3"]
        );
        assert_eq!(design.n_strata(), 3);
    }

    #[test]
    fn single_exposure_is_rejected() {
        let spec = ExposureSpec::continuous(&["A"]);
        assert!(matches!(duplicate_augment(&figure1(), &spec), Err(DesignError::Spec(_))));
    }

    #[test]
    fn dichotomous_design_columns() {
        let spec = ExposureSpec::dichotomous(&["A", "A'"]);
        let aug = duplicate_augment(&figure1(), &spec).unwrap();
        let d = build_design_matrix(&aug, &spec).unwrap();
        assert_eq!(d.column_names, vec!["Exposures", "L1", "Exposures:A_type2", "L1:A_type2"]);
        assert_eq!(d.strata_labels, vec!["A_type1", "A_type2"]);
        // Subject 2, second copy: exposure 1, L1 1, both interactions active.
        assert_eq!(d.x.row(5).to_vec(), vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(d.x.row(1).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.cluster[1], d.cluster[5]);
    }

    #[test]
    fn quintile_design_columns() {
        let schema = Schema {
            id_column: "id".into(),
            entry_column: None,
            exit_column: "t".into(),
            event_column: "d".into(),
            exposure_columns: vec!["a".into(), "b".into()],
            covariate_columns: vec![],
            strata_columns: vec![],
        };
        let rows = (0..20)
            .map(|i| CohortRow {
                subject_id: i.to_string(),
                entry_time: 0.0,
                exit_time: 1.0 + i as f64,
                event: i % 3 != 0,
                exposures: vec![i as f64, ((i * 7) % 20) as f64],
                covariates: vec![],
                strata: vec![],
            })
            .collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let spec = ExposureSpec::quantile_categories(&["a", "b"], 5);
        let aug = duplicate_augment(&ds, &spec).unwrap();
        let d = build_design_matrix(&aug, &spec).unwrap();
        assert_eq!(d.n_cols(), 8);
        assert_eq!(d.interaction_columns.len(), 4);
        assert_eq!(d.interaction_columns[0], "Exposures2:A_type2");
    }

    #[test]
    fn continuous_minimal_design() {
        let ds = five_rows_three_exposures();
        let spec = ExposureSpec::continuous(&["e1", "e2"]);
        let aug = duplicate_augment(&ds, &spec).unwrap();
        assert_eq!(build_design_matrix(&aug, &spec).unwrap().n_cols(), 2);
    }

    #[test]
    fn eventless_design_is_rejected() {
        let mut ds = five_rows_three_exposures();
        let rows: Vec<CohortRow> = ds
            .rows()
            .iter()
            .cloned()
            .map(|mut r| {
                r.event = false;
                r
            })
            .collect();
        ds = Dataset::new(ds.schema().clone(), rows).unwrap();
        let spec = ExposureSpec::continuous(&["e1", "e2"]);
        let aug = duplicate_augment(&ds, &spec).unwrap();
        assert_eq!(build_design_matrix(&aug, &spec), Err(DesignError::NoInformativeStrata));
    }

    #[test]
    fn non_binary_values_rejected_for_dichotomous() {
        let ds = five_rows_three_exposures();
        let spec = ExposureSpec::dichotomous(&["e1", "e2"]);
        assert!(matches!(duplicate_augment(&ds, &spec), Err(DesignError::NotDichotomous { .. })));
    }

    #[test]
    fn labelled_categories_must_be_in_range() {
        let ds = five_rows_three_exposures();
        let spec = ExposureSpec::new(ExposureKind::Categorical, &["e1", "e2"], Some(3));
        let err = duplicate_augment(&ds, &spec).unwrap_err();
        assert!(matches!(err, DesignError::UnseenLabel { ref exposure, .. } if exposure == "e1"));
    }

    #[test]
    fn p10_p90_increment() {
        let values: Vec<f64> = (0..=10).map(f64::from).collect();
        assert!((percentile(&values, 0.9) - percentile(&values, 0.1) - 8.0).abs() < 1e-12);
    }
}
