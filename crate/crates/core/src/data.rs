//! Counting-process cohort data: schema, ingestion, serialization and validation.
//!
//! Each [`CohortRow`] is one `(entry, exit]` interval of follow-up for a subject.
//! Subjects may contribute several rows (time-varying covariates) and may enter
//! late (left truncation). A subject is at risk at time `t` on a row iff
//! `entry < t <= exit`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Cell values treated as missing in exposure and covariate columns.
const MISSING_TOKENS: [&str; 3] = ["", "NA", "NaN"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("column `{column}` named in the schema is missing from the input header")]
    MissingColumn { column: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} (subject `{subject_id}`): entry time {entry} is not before exit time {exit}")]
    InvalidInterval {
        row: usize,
        subject_id: String,
        entry: f64,
        exit: f64,
    },
    #[error("row {row}: expected {expected} values for {what}, found {found}")]
    Shape {
        row: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("input has no header row")]
    NoHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Column roles of a cohort file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub id_column: String,
    /// Left-truncation entry time. When absent every row enters at time 0.
    #[serde(default)]
    pub entry_column: Option<String>,
    pub exit_column: String,
    pub event_column: String,
    pub exposure_columns: Vec<String>,
    #[serde(default)]
    pub covariate_columns: Vec<String>,
    #[serde(default)]
    pub strata_columns: Vec<String>,
}

impl Schema {
    /// Checks that column names are pairwise distinct and that at least two
    /// exposures are declared.
    pub fn check(&self) -> Result<(), DataError> {
        if self.exposure_columns.len() < 2 {
            return Err(DataError::Schema(format!(
                "at least two exposure columns are required, found {}",
                self.exposure_columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in self.all_columns() {
            if !seen.insert(name) {
                return Err(DataError::Schema(format!("column `{name}` is used more than once")));
            }
        }
        Ok(())
    }

    /// Every column the schema refers to, in file-writing order.
    pub fn all_columns(&self) -> Vec<&str> {
        let mut out = vec![self.id_column.as_str()];
        if let Some(entry) = &self.entry_column {
            out.push(entry);
        }
        out.push(&self.exit_column);
        out.push(&self.event_column);
        out.extend(self.exposure_columns.iter().map(String::as_str));
        out.extend(self.covariate_columns.iter().map(String::as_str));
        out.extend(self.strata_columns.iter().map(String::as_str));
        out
    }

    pub fn exposure_index(&self, name: &str) -> Option<usize> {
        self.exposure_columns.iter().position(|c| c == name)
    }
}

/// One counting-process interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub subject_id: String,
    pub entry_time: f64,
    pub exit_time: f64,
    pub event: bool,
    /// Aligned with [`Schema::exposure_columns`].
    pub exposures: Vec<f64>,
    /// Aligned with [`Schema::covariate_columns`].
    pub covariates: Vec<f64>,
    /// Aligned with [`Schema::strata_columns`].
    pub strata: Vec<String>,
}

/// An immutable, validated collection of cohort rows in file order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<CohortRow>,
    dropped_incomplete: usize,
}

impl Dataset {
    /// Builds a dataset from rows, checking row shapes and interval ordering.
    pub fn new(schema: Schema, rows: Vec<CohortRow>) -> Result<Self, DataError> {
        schema.check()?;
        for (i, row) in rows.iter().enumerate() {
            check_row(&schema, row, i + 1)?;
        }
        Ok(Self {
            schema,
            rows,
            dropped_incomplete: 0,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[CohortRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of input rows rejected at load because an exposure or covariate
    /// value was missing.
    pub fn dropped_incomplete(&self) -> usize {
        self.dropped_incomplete
    }

    pub fn event_count(&self) -> usize {
        self.rows.iter().filter(|r| r.event).count()
    }

    /// Values of one exposure column, in row order.
    pub fn exposure_column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.schema.exposure_index(name)?;
        Some(self.rows.iter().map(|r| r.exposures[j]).collect())
    }

    /// Returns a copy of the dataset with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: order.iter().map(|&i| self.rows[i].clone()).collect(),
            dropped_incomplete: self.dropped_incomplete,
        }
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        // Writing to a Vec cannot fail.
        write_dataset_to(self, &mut buf).expect("in-memory serialization");
        hex::encode(Sha256::digest(&buf))
    }
}

fn check_row(schema: &Schema, row: &CohortRow, line: usize) -> Result<(), DataError> {
    let shapes = [
        ("exposures", schema.exposure_columns.len(), row.exposures.len()),
        ("covariates", schema.covariate_columns.len(), row.covariates.len()),
        ("strata", schema.strata_columns.len(), row.strata.len()),
    ];
    for (what, expected, found) in shapes {
        if expected != found {
            return Err(DataError::Shape {
                row: line,
                what,
                expected,
                found,
            });
        }
    }
    if !(row.entry_time < row.exit_time) || !row.entry_time.is_finite() || !row.exit_time.is_finite()
    {
        return Err(DataError::InvalidInterval {
            row: line,
            subject_id: row.subject_id.clone(),
            entry: row.entry_time,
            exit: row.exit_time,
        });
    }
    if let Some(bad) = row.exposures.iter().chain(&row.covariates).find(|v| !v.is_finite()) {
        return Err(DataError::Schema(format!(
            "row {line}: non-finite value {bad} in a numeric column"
        )));
    }
    Ok(())
}

/// Reads a delimited cohort file. Comma or tab delimiters are detected from the
/// header line.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, DataError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_dataset(&text, schema)
}

/// Parses delimited cohort text; see [`load_dataset`].
pub fn parse_dataset(text: &str, schema: &Schema) -> Result<Dataset, DataError> {
    schema.check()?;
    let header_line = text.lines().next().ok_or(DataError::NoHeader)?;
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let locate = |name: &str| -> Result<usize, DataError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                column: name.to_owned(),
            })
    };
    let id_col = locate(&schema.id_column)?;
    let entry_col = schema.entry_column.as_deref().map(locate).transpose()?;
    let exit_col = locate(&schema.exit_column)?;
    let event_col = locate(&schema.event_column)?;
    let exposure_cols = schema
        .exposure_columns
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>, _>>()?;
    let covariate_cols = schema
        .covariate_columns
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>, _>>()?;
    let strata_cols = schema
        .strata_columns
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 1;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let real = |col: usize| -> Result<f64, DataError> {
            let raw = cell(col);
            raw.parse::<f64>().map_err(|_| DataError::Parse {
                row: line,
                column: header[col].clone(),
                value: raw.to_owned(),
            })
        };

        // Missing exposure/covariate values reject the row rather than fail the load.
        if exposure_cols
            .iter()
            .chain(&covariate_cols)
            .any(|&c| MISSING_TOKENS.contains(&cell(c)))
        {
            dropped += 1;
            continue;
        }

        let entry_time = match entry_col {
            Some(c) => real(c)?,
            None => 0.0,
        };
        let exit_time = real(exit_col)?;
        let event = match cell(event_col) {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::Parse {
                    row: line,
                    column: header[event_col].clone(),
                    value: other.to_owned(),
                })
            }
        };
        let row = CohortRow {
            subject_id: cell(id_col).to_owned(),
            entry_time,
            exit_time,
            event,
            exposures: exposure_cols.iter().map(|&c| real(c)).collect::<Result<_, _>>()?,
            covariates: covariate_cols.iter().map(|&c| real(c)).collect::<Result<_, _>>()?,
            strata: strata_cols.iter().map(|&c| cell(c).to_owned()).collect(),
        };
        check_row(schema, &row, line)?;
        rows.push(row);
    }
    if dropped > 0 {
        log::warn!("rejected {dropped} row(s) with missing exposure or covariate values");
    }
    Ok(Dataset {
        schema: schema.clone(),
        rows,
        dropped_incomplete: dropped,
    })
}

/// Writes the dataset as comma-delimited text with the schema's columns.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut file = File::create(path)?;
    write_dataset_to(dataset, &mut file)
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, out: W) -> Result<(), DataError> {
    let schema = &dataset.schema;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(schema.all_columns())?;
    for row in &dataset.rows {
        let mut record: Vec<String> = vec![row.subject_id.clone()];
        if schema.entry_column.is_some() {
            record.push(row.entry_time.to_string());
        }
        record.push(row.exit_time.to_string());
        record.push(if row.event { "1" } else { "0" }.to_owned());
        record.extend(row.exposures.iter().map(f64::to_string));
        record.extend(row.covariates.iter().map(f64::to_string));
        record.extend(row.strata.iter().cloned());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    IntervalOrdering,
    SubjectOverlap,
    StratumEvents,
    ConstantColumns,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    /// Zero-based row indices involved.
    pub rows: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, check: Check) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.check == check)
    }
}

fn check_result(check: Check, findings: Vec<Finding>) -> CheckResult {
    CheckResult {
        check,
        passed: findings.is_empty(),
        findings,
    }
}

/// Scans a dataset for structural problems. Never fails; fatal conditions
/// surface later when a model is fitted.
pub fn validate(dataset: &Dataset) -> ValidationReport {
    let rows = dataset.rows();

    let ordering = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !(r.entry_time < r.exit_time))
        .map(|(i, r)| Finding {
            rows: vec![i],
            message: format!(
                "subject `{}`: entry {} is not before exit {}",
                r.subject_id, r.entry_time, r.exit_time
            ),
        })
        .collect();

    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_subject.entry(&r.subject_id).or_default().push(i);
    }
    let mut overlap = Vec::new();
    for (subject, mut idx) in by_subject {
        idx.sort_by(|&a, &b| rows[a].entry_time.total_cmp(&rows[b].entry_time));
        for pair in idx.windows(2) {
            let (prev, next) = (&rows[pair[0]], &rows[pair[1]]);
            if next.entry_time < prev.exit_time {
                overlap.push(Finding {
                    rows: pair.to_vec(),
                    message: format!(
                        "subject `{subject}`: interval ({}, {}] overlaps ({}, {}]",
                        prev.entry_time, prev.exit_time, next.entry_time, next.exit_time
                    ),
                });
            }
        }
    }

    let mut strata: BTreeMap<&[String], (Vec<usize>, usize)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let slot = strata.entry(r.strata.as_slice()).or_default();
        slot.0.push(i);
        slot.1 += usize::from(r.event);
    }
    let stratum_events = strata
        .into_iter()
        .filter(|(_, (_, events))| *events == 0)
        .map(|(key, (idx, _))| Finding {
            rows: idx,
            message: format!("stratum [{}] has no events and is non-informative", key.join(", ")),
        })
        .collect();

    let schema = dataset.schema();
    let mut constant = Vec::new();
    if !rows.is_empty() {
        let numeric = schema
            .exposure_columns
            .iter()
            .enumerate()
            .map(|(j, name)| (name, rows.iter().map(move |r| r.exposures[j]).collect::<Vec<_>>()))
            .chain(schema.covariate_columns.iter().enumerate().map(|(j, name)| {
                (name, rows.iter().map(move |r| r.covariates[j]).collect::<Vec<_>>())
            }));
        for (name, values) in numeric {
            if values.iter().all(|&v| v == values[0]) {
                constant.push(Finding {
                    rows: Vec::new(),
                    message: format!("column `{name}` is constant ({})", values[0]),
                });
            }
        }
    }

    ValidationReport {
        checks: vec![
            check_result(Check::IntervalOrdering, ordering),
            check_result(Check::SubjectOverlap, overlap),
            check_result(Check::StratumEvents, stratum_events),
            check_result(Check::ConstantColumns, constant),
        ],
    }
}

/// Groups row indices by their composite stratum label, preserving first
/// appearance order of strata.
pub(crate) fn stratum_groups(dataset: &Dataset) -> (Vec<usize>, Vec<Vec<String>>) {
    let mut lookup: HashMap<&[String], usize> = HashMap::new();
    let mut labels = Vec::new();
    let ids = dataset
        .rows
        .iter()
        .map(|r| {
            *lookup.entry(r.strata.as_slice()).or_insert_with(|| {
                labels.push(r.strata.clone());
                labels.len() - 1
            })
        })
        .collect();
    (ids, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn figure1_schema() -> Schema {
        Schema {
            id_column: "ID".into(),
            entry_column: None,
            exit_column: "Time".into(),
            event_column: "Y".into(),
            exposure_columns: vec!["A".into(), "A'".into()],
            covariate_columns: vec!["L1".into()],
            strata_columns: vec![],
        }
    }

    const FIGURE1: &str = "ID,A,A',Y,Time,L1\n1,1,1,1,20,1\n2,0,1,0,19,1\n3,1,1,0,17,0\n4,0,0,0,21,0\n";

    #[test]
    fn loads_figure1_layout() {
        let ds = parse_dataset(FIGURE1, &figure1_schema()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.rows()[1].subject_id, "2");
        assert_eq!(ds.rows()[1].exposures, vec![0.0, 1.0]);
        assert_eq!(ds.rows()[0].entry_time, 0.0);
        assert!(ds.rows()[0].event);
        assert_eq!(ds.event_count(), 1);
        assert!(validate(&ds).all_passed());
    }

    #[test]
    fn tab_delimiter_is_detected() {
        let tsv = FIGURE1.replace(',', "\t");
        let ds = parse_dataset(&tsv, &figure1_schema()).unwrap();
        assert_eq!(ds, parse_dataset(FIGURE1, &figure1_schema()).unwrap());
    }

    #[test]
    fn header_only_gives_empty_dataset() {
        let ds = parse_dataset("ID,A,A',Y,Time,L1\n", &figure1_schema()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn unparseable_time_cites_row() {
        let text = "ID,A,A',Y,Time,L1\n1,1,1,1,20,1\n2,0,1,0,abc,1\n";
        match parse_dataset(text, &figure1_schema()) {
            Err(DataError::Parse { row, column, value }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "Time");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text = "ID,A,Y,Time,L1\n1,1,1,20,1\n";
        let err = parse_dataset(text, &figure1_schema()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { ref column } if column == "A'"));
    }

    #[test]
    fn event_must_be_zero_or_one() {
        let text = "ID,A,A',Y,Time,L1\n1,1,1,true,20,1\n";
        assert!(matches!(
            parse_dataset(text, &figure1_schema()),
            Err(DataError::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn rows_with_missing_values_are_dropped_and_counted() {
        let text = "ID,A,A',Y,Time,L1\n1,1,1,1,20,1\n2,NA,1,0,19,1\n3,1,,0,17,0\n";
        let ds = parse_dataset(text, &figure1_schema()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dropped_incomplete(), 2);
    }

    #[test]
    fn entry_not_before_exit_is_rejected() {
        let mut schema = figure1_schema();
        schema.entry_column = Some("Start".into());
        let text = "ID,Start,A,A',Y,Time,L1\n7,20,1,1,1,20,1\n";
        let err = parse_dataset(text, &schema).unwrap_err();
        assert!(matches!(err, DataError::InvalidInterval { ref subject_id, .. } if subject_id == "7"));
    }

    #[test]
    fn schema_requires_two_distinct_exposures() {
        let mut schema = figure1_schema();
        schema.exposure_columns.pop();
        assert!(schema.check().is_err());
        let mut schema = figure1_schema();
        schema.covariate_columns = vec!["A".into()];
        assert!(schema.check().is_err());
    }

    fn row(id: &str, entry: f64, exit: f64, event: bool, l1: f64) -> CohortRow {
        CohortRow {
            subject_id: id.into(),
            entry_time: entry,
            exit_time: exit,
            event,
            exposures: vec![0.0, 1.0],
            covariates: vec![l1],
            strata: vec![],
        }
    }

    #[test]
    fn overlapping_intervals_are_reported() {
        let rows = vec![row("s", 0.0, 5.0, false, 0.0), row("s", 3.0, 8.0, true, 1.0)];
        let ds = Dataset::new(figure1_schema(), rows).unwrap();
        let before = ds.clone();
        let report = validate(&ds);
        assert_eq!(ds, before);
        let overlap = report.get(Check::SubjectOverlap).unwrap();
        assert!(!overlap.passed);
        assert_eq!(overlap.findings[0].rows, vec![0, 1]);
        assert!(report.get(Check::IntervalOrdering).unwrap().passed);
    }

    #[test]
    fn adjacent_intervals_do_not_overlap() {
        let rows = vec![row("s", 0.0, 5.0, false, 0.0), row("s", 5.0, 8.0, true, 1.0)];
        let ds = Dataset::new(figure1_schema(), rows).unwrap();
        assert!(validate(&ds).get(Check::SubjectOverlap).unwrap().passed);
    }

    #[test]
    fn constant_covariate_is_reported() {
        let rows = vec![row("a", 0.0, 5.0, false, 1.0), row("b", 0.0, 8.0, true, 1.0)];
        let ds = Dataset::new(figure1_schema(), rows).unwrap();
        let check = validate(&ds);
        let constant = check.get(Check::ConstantColumns).unwrap();
        // A (all 0), A' (all 1) and L1 (all 1).
        assert_eq!(constant.findings.len(), 3);
        assert!(constant.findings[2].message.contains("L1"));
    }

    #[test]
    fn eventless_stratum_is_flagged() {
        let mut schema = figure1_schema();
        schema.strata_columns = vec!["S".into()];
        let mut rows = vec![row("a", 0.0, 5.0, true, 0.0), row("b", 0.0, 8.0, false, 1.0)];
        rows[0].strata = vec!["x".into()];
        rows[1].strata = vec!["y".into()];
        let ds = Dataset::new(schema, rows).unwrap();
        let check = validate(&ds);
        let events = check.get(Check::StratumEvents).unwrap();
        assert_eq!(events.findings.len(), 1);
        assert_eq!(events.findings[0].rows, vec![1]);
    }
}
