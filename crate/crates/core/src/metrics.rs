//! Depth error metrics and the tabular reports built from them.

use std::fmt::Write as _;

use crate::error::{check_dims, Error, Result};
use crate::maps::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub l1_rel: f64,
    pub l2_rel: f64,
    pub rmse: f64,
    pub valid_pixel_count: usize,
}

/// Sums over the valid set, so reports from several maps can be pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    count: usize,
}

impl ErrorAccumulator {
    pub fn add(&mut self, pred: &DepthMap, gt: &DepthMap) -> Result<()> {
        check_dims("evaluate", gt.dims(), pred.dims())?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if !DepthMap::is_valid_depth(g) {
                continue;
            }
            let e = p - g;
            self.abs_rel += e.abs() / g;
            self.sq_rel += e * e / g;
            self.sq += e * e;
            self.count += 1;
        }
        Ok(())
    }

    pub fn report(&self) -> Result<EvalReport> {
        if self.count == 0 {
            return Err(Error::EmptyValidSet);
        }
        let n = self.count as f64;
        Ok(EvalReport {
            l1_rel: self.abs_rel / n,
            l2_rel: self.sq_rel / n,
            rmse: (self.sq / n).sqrt(),
            valid_pixel_count: self.count,
        })
    }
}

/// L1-rel, L2-rel (`(p−g)²/g`) and RMSE over pixels with valid ground truth.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap) -> Result<EvalReport> {
    let mut acc = ErrorAccumulator::default();
    acc.add(pred, gt)?;
    acc.report()
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sequence: String,
    pub method: String,
    pub report: EvalReport,
}

/// A titled list of rows rendered as an aligned text table or as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, sequence: impl Into<String>, method: impl Into<String>, report: EvalReport) {
        self.rows.push(ReportRow {
            sequence: sequence.into(),
            method: method.into(),
            report,
        });
    }

    pub fn find(&self, sequence: &str, method: &str) -> Option<&EvalReport> {
        self.rows
            .iter()
            .find(|r| r.sequence == sequence && r.method == method)
            .map(|r| &r.report)
    }

    pub fn to_text(&self) -> String {
        let seq_w = self.rows.iter().map(|r| r.sequence.len()).max().unwrap_or(0).max(8);
        let method_w = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "{}", self.title);
        }
        let _ = writeln!(
            out,
            "{:<seq_w$}  {:<method_w$}  {:>8}  {:>8}  {:>8}  {:>9}",
            "Sequence", "Method", "L1-rel", "L2-rel", "RMSE", "pixels"
        );
        let mut last = "";
        for row in &self.rows {
            let seq = if row.sequence == last { "" } else { row.sequence.as_str() };
            last = &row.sequence;
            let r = &row.report;
            let _ = writeln!(
                out,
                "{:<seq_w$}  {:<method_w$}  {:>8.3}  {:>8.3}  {:>8.3}  {:>9}",
                seq, row.method, r.l1_rel, r.l2_rel, r.rmse, r.valid_pixel_count
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,method,l1_rel,l2_rel,rmse,valid_pixels\n");
        for row in &self.rows {
            let r = &row.report;
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{}",
                csv_field(&row.sequence),
                csv_field(&row.method),
                r.l1_rel,
                r.l2_rel,
                r.rmse,
                r.valid_pixel_count
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
