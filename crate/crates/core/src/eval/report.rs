//! Report emission: JSON, CSV, and SVG share bars.

use super::score::QuestionnaireResult;
use super::EvalError;
use std::fmt::Write as _;
use std::path::Path;

/// Output formats for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    SvgBars,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::SvgBars => "report.svg",
        }
    }
}

/// Writes one report file into `dir`; returns the file path.
pub fn emit_report(
    result: &QuestionnaireResult,
    format: ReportFormat,
    dir: &Path,
) -> Result<std::path::PathBuf, EvalError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format.file_name());
    let body = match format {
        ReportFormat::Json => render_json(result),
        ReportFormat::Csv => render_csv(result),
        ReportFormat::SvgBars => render_svg(result),
    };
    std::fs::write(&path, body)?;
    Ok(path)
}

fn render_json(result: &QuestionnaireResult) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("result serializes");
    s.push('\n');
    s
}

/// One row per dimension:
/// `dimension,count_first,count_second,share_first,verdict,indeterminate`.
fn render_csv(result: &QuestionnaireResult) -> String {
    let mut out = String::from("dimension,count_first,count_second,share_first,verdict,indeterminate\n");
    for d in &result.dimensions {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.dimension, d.count_first, d.count_second, d.share_first, d.verdict, d.indeterminate
        );
    }
    out
}

/// One horizontal share bar per dimension; bar width is proportional to the
/// first attitude's share over a 1000-unit track.
fn render_svg(result: &QuestionnaireResult) -> String {
    const TRACK: f64 = 1000.0;
    const ROW: f64 = 44.0;
    let height = 70.0 + ROW * result.dimensions.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="1160" height="{height}" font-family="monospace" font-size="14">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="24">verdict {} | bank {} | model {} | adapter {}</text>"#,
        result.code, result.bank_version, result.model_id, result.adapter_id
    );
    for (i, d) in result.dimensions.iter().enumerate() {
        let y = 50.0 + ROW * i as f64;
        let (first, second) = d.dimension.attitudes();
        let w = d.share_first * TRACK;
        let _ = writeln!(
            s,
            r#"<text x="10" y="{ty}">{dim}</text>"#,
            ty = y + 16.0,
            dim = d.dimension
        );
        let _ = writeln!(
            s,
            r##"<rect x="120" y="{y}" width="{TRACK}" height="22" fill="#dddddd"/>"##
        );
        let _ = writeln!(
            s,
            r##"<rect x="120" y="{y}" width="{w}" height="22" fill="#5b8db8"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{tx}" y="{ty}">{first}:{cf} {second}:{cs} verdict {verdict}{flag}</text>"#,
            tx = 130.0 + TRACK,
            ty = y + 16.0,
            cf = d.count_first,
            cs = d.count_second,
            verdict = d.verdict,
            flag = if d.indeterminate { " (indeterminate)" } else { "" }
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Parses counts back out of a report CSV, for round-trip checks.
pub fn parse_csv_counts(csv: &str) -> Vec<(String, usize, usize)> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut parts = line.split(',');
            let dim = parts.next().unwrap_or_default().to_string();
            let first = parts.next().and_then(|v| v.parse().ok()).unwrap_or(0);
            let second = parts.next().and_then(|v| v.parse().ok()).unwrap_or(0);
            (dim, first, second)
        })
        .collect()
}
