use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EvalReport, Position};
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "model,k,position,recall,mrr,count";
pub const COLDSTART_HEADER: &str = "model,n,recall_at_5";

/// One parsed line of a report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub k: usize,
    pub position: Position,
    pub recall: f64,
    pub mrr: f64,
    pub count: u64,
}

pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for m in &report.models {
        for (a, k) in m.ks.iter().enumerate() {
            for (b, pos) in m.positions.iter().enumerate() {
                let c = &m.cells[a][b];
                writeln!(out, "{},{k},{pos},{:.6},{:.6},{}", m.model, c.recall(), c.mrr(), c.count).unwrap();
            }
        }
    }
    out
}

/// Recall@5 per first-n position, one row per model and position.
pub fn render_coldstart(report: &EvalReport) -> Result<String> {
    let mut out = String::from(COLDSTART_HEADER);
    out.push('\n');
    for m in &report.models {
        let a = m
            .ks
            .iter()
            .position(|&k| k == 5)
            .ok_or_else(|| Error::Config(format!("{}: cold-start curves need k=5", m.model)))?;
        for (b, pos) in m.positions.iter().enumerate() {
            if let Position::First(n) = pos {
                writeln!(out, "{},{n},{:.6}", m.model, m.cells[a][b].recall()).unwrap();
            }
        }
    }
    Ok(out)
}

pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, render_report(report))?;
    Ok(())
}

pub fn emit_coldstart(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, render_coldstart(report)?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
        return Err(Error::Format(format!("{}: unexpected report header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| field(i).parse::<f64>().map_err(|e| Error::Format(format!("{}: {e}", field(i))));
        rows.push(ReportRow {
            model: field(0).to_string(),
            k: field(1).parse().map_err(|_| Error::Format(format!("bad k {:?}", field(1))))?,
            position: field(2).parse()?,
            recall: num(3)?,
            mrr: num(4)?,
            count: field(5).parse().map_err(|_| Error::Format(format!("bad count {:?}", field(5))))?,
        });
    }
    Ok(rows)
}
