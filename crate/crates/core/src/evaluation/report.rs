use std::fmt::Write;

use super::metrics::{EvalReport, MetricRow};
use crate::error::{Error, Result};

pub const OVERALL_LABEL: &str = "avg";

/// Percentage with one decimal, as in published result tables.
pub fn percent(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn rows(reports: &[EvalReport]) -> Result<Vec<(String, &str, &MetricRow)>> {
    if reports.is_empty() || reports.iter().all(|r| r.domains.is_empty()) {
        return Err(Error::Empty("report has no rows"));
    }
    let mut domains: Vec<_> = reports.iter().flat_map(|r| r.domains.keys().copied()).collect();
    domains.sort();
    domains.dedup();
    let mut out = Vec::new();
    for d in domains {
        for r in reports {
            if let Some(row) = r.domains.get(&d) {
                out.push((d.as_str().to_string(), r.model.as_str(), row));
            }
        }
    }
    for r in reports {
        out.push((OVERALL_LABEL.to_string(), r.model.as_str(), &r.overall));
    }
    Ok(out)
}

/// Tab-separated rows: domain × model with P/HR/F1 in percent and raw counts.
pub fn render_tsv(reports: &[EvalReport]) -> Result<String> {
    let mut s = String::from("domain\tmodel\tprecision\thit_rate\tf1\tcalls\teligible\tdecisions\tcorrect\thits\tdegenerate\n");
    for (domain, model, row) in rows(reports)? {
        let c = &row.counts;
        writeln!(
            s,
            "{domain}\t{model}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            percent(row.precision),
            percent(row.hit_rate),
            percent(row.f1),
            c.calls,
            c.eligible,
            c.decisions,
            c.correct,
            c.hits,
            row.degenerate
        )
        .expect("writing to a String");
    }
    Ok(s)
}

/// Aligned plain-text table.
pub fn render_text(reports: &[EvalReport]) -> Result<String> {
    let header = ["Domain", "Model", "P", "HR", "F1"];
    let body: Vec<[String; 5]> = rows(reports)?
        .into_iter()
        .map(|(domain, model, row)| {
            let mark = if row.degenerate { "*" } else { "" };
            [
                domain,
                model.to_string(),
                format!("{}{mark}", percent(row.precision)),
                percent(row.hit_rate),
                percent(row.f1),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &body {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut s = String::new();
    let mut line = |cells: &[&str]| {
        let mut l = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if i < 2 {
                let _ = write!(l, "{cell:<w$}  ");
            } else {
                let _ = write!(l, "{cell:>w$}  ");
            }
        }
        s.push_str(l.trim_end());
        s.push('\n');
    };
    line(&header);
    for r in &body {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    if body.iter().any(|r| r[2].ends_with('*')) {
        s.push_str("* no decisions; precision reported as 0\n");
    }
    Ok(s)
}
