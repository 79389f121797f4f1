use std::fmt::Write;

use super::compare::ComparisonReport;
use crate::design::ExposureKind;

/// `P = 0.005`, `P = 0.0004`, `P < 0.0001`.
pub fn format_p_value(p: f64) -> String {
    if p.is_nan() {
        "P = NA".to_owned()
    } else if p < 1e-4 {
        "P < 0.0001".to_owned()
    } else if p < 1e-3 {
        format!("P = {p:.4}")
    } else {
        format!("P = {p:.3}")
    }
}

const DASH: &str = "–";

struct Block {
    headers: Vec<String>,
    /// cells[exposure][column]
    cells: Vec<Vec<String>>,
    difference: String,
}

fn block(report: &ComparisonReport) -> Block {
    let difference = format_p_value(report.difference_test.p_value);
    match report.kind {
        ExposureKind::Categorical => {
            let k = report.n_levels.unwrap_or(2);
            let reference = report.reference_level.unwrap_or(1);
            let headers = (1..=k).map(|c| format!("Q{c}")).collect();
            let cells = report
                .exposures
                .iter()
                .map(|e| {
                    (1..=k)
                        .map(|c| {
                            if c == reference {
                                return DASH.to_owned();
                            }
                            e.estimates
                                .iter()
                                .find(|t| t.level == Some(c))
                                .map_or_else(|| "NA".to_owned(), |t| t.hazard_ratio.to_string())
                        })
                        .collect()
                })
                .collect();
            Block {
                headers,
                cells,
                difference,
            }
        }
        kind => {
            let header = match kind {
                ExposureKind::Continuous => "Continuous",
                ExposureKind::Trend => "Trend",
                _ => "Dichotomous",
            };
            let cells = report
                .exposures
                .iter()
                .map(|e| e.estimates.iter().map(|t| t.hazard_ratio.to_string()).collect())
                .collect();
            Block {
                headers: vec![header.to_owned()],
                cells,
                difference,
            }
        }
    }
}

/// Renders one or more comparison reports of the same exposures side by
/// side: one row per exposure, a column per reported term, and a final
/// `Difference` row holding each report's test p-value under its first
/// column.
pub fn render_table(reports: &[ComparisonReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let blocks: Vec<Block> = reports.iter().map(block).collect();

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new()];
    for b in &blocks {
        header.extend(b.headers.iter().cloned());
    }
    rows.push(header);
    for (i, e) in first.exposures.iter().enumerate() {
        let mut row = vec![e.column.clone()];
        for b in &blocks {
            match b.cells.get(i) {
                Some(cells) => row.extend(cells.iter().cloned()),
                None => row.extend(b.headers.iter().map(|_| "NA".to_owned())),
            }
        }
        rows.push(row);
    }
    let mut diff = vec!["Difference".to_owned()];
    for b in &blocks {
        diff.push(b.difference.clone());
        diff.extend(b.headers.iter().skip(1).map(|_| String::new()));
    }
    rows.push(diff);

    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            let pad = widths[j] - cell.chars().count();
            line.push_str(cell);
            line.extend(std::iter::repeat_n(' ', pad));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out.push('\n');
    let level = (first.metadata.options.confidence * 1000.0).round() / 10.0;
    let _ = writeln!(out, "Numbers are hazard ratios [{level}% confidence intervals].");
    for r in reports {
        if !r.diagnostics.converged {
            let _ = writeln!(
                out,
                "Warning: {} fit did not converge ({}).",
                block_name(r.kind),
                r.diagnostics.message.as_deref().unwrap_or("no message")
            );
        }
    }
    out
}

fn block_name(kind: ExposureKind) -> &'static str {
    match kind {
        ExposureKind::Continuous => "continuous",
        ExposureKind::Dichotomous => "dichotomous",
        ExposureKind::Categorical => "categorical",
        ExposureKind::Trend => "trend",
    }
}
