//! Deterministic rendering of a metrics report as a fixed-width table, JSON,
//! or CSV. Columns are always Entity, Relation, Contradictory, Invented,
//! Subjective, Unverifiable, OA, Bi; zero-support cells render an em dash.

use super::MetricsReport;
use crate::annotation::HallucType;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl ReportFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "table" => Some(ReportFormat::Table),
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }
}

pub const COLUMNS: [&str; 9] = [
    "Editor",
    "Entity",
    "Relation",
    "Contradictory",
    "Invented",
    "Subjective",
    "Unverifiable",
    "OA",
    "Bi",
];

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// F1 cell for a type: percentage, or an em dash when the type never occurs
/// in gold.
fn type_cell(report: &MetricsReport, t: HallucType) -> String {
    match report.per_type.get(&t) {
        Some(m) if m.support > 0 => pct(m.f1),
        _ => "—".to_string(),
    }
}

fn row_cells(report: &MetricsReport, label: &str) -> Vec<String> {
    let mut cells = vec![label.to_string()];
    for t in HallucType::ALL {
        cells.push(type_cell(report, t));
    }
    cells.push(pct(report.oa_f1));
    cells.push(pct(report.bi_f1));
    cells
}

/// Renders the report under `label` (the editor name). Output is
/// byte-deterministic for identical inputs.
pub fn render_report(report: &MetricsReport, format: ReportFormat, label: &str) -> String {
    match format {
        ReportFormat::Table => {
            let cells = row_cells(report, label);
            let widths: Vec<usize> = COLUMNS
                .iter()
                .zip(&cells)
                .map(|(h, c)| h.chars().count().max(c.chars().count()))
                .collect();
            let mut out = String::new();
            for (i, h) in COLUMNS.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                out.push_str(&pad(h, widths[i]));
            }
            out.push('\n');
            for (i, c) in cells.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                out.push_str(&pad(c, widths[i]));
            }
            out.push('\n');
            out
        }
        ReportFormat::Json => {
            let mut value = serde_json::to_value(report).expect("report serializes");
            value["editor"] = serde_json::Value::String(label.to_string());
            serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
        }
        ReportFormat::Csv => {
            let header = COLUMNS.join(",");
            let cells = row_cells(report, label);
            format!("{header}\n{}\n", cells.join(","))
        }
    }
}

fn pad(s: &str, width: usize) -> String {
    let len = s.chars().count();
    let mut out = s.to_string();
    for _ in len..width {
        out.push(' ');
    }
    out
}
