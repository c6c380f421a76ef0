//! g(n) curves as CSV: header `n,g,fraction`, one row per step count.

use std::fmt::Write;

use crate::simulator::GCurve;

use super::{parse_f64, parse_usize, syntax, FormatError};

const HEADER: &str = "n,g,fraction";

pub fn serialize_curve_csv(curve: &GCurve) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (n, &g) in curve.counts.iter().enumerate() {
        let _ = writeln!(out, "{n},{g},{}", curve.fraction(n));
    }
    out
}

/// Reads a curve back; `num_trials` is recovered from the fraction column.
pub fn parse_curve_csv(text: &str) -> Result<GCurve, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(syntax(1, format!("expected header `{HEADER}`"))),
    }
    let mut counts = Vec::new();
    let mut num_trials: Option<usize> = None;
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.trim().split(',').collect();
        let [n, g, frac] = fields.as_slice() else {
            return Err(syntax(line, "expected three columns"));
        };
        let (n, g, frac) = (parse_usize(n, line)?, parse_usize(g, line)?, parse_f64(frac, line)?);
        if n != counts.len() {
            return Err(syntax(line, format!("expected n = {}, found {n}", counts.len())));
        }
        if counts.last().is_some_and(|&prev| g < prev) {
            return Err(syntax(line, "g decreases"));
        }
        if g > 0 && num_trials.is_none() {
            num_trials = Some((g as f64 / frac).round() as usize);
        }
        if let Some(t) = num_trials {
            if g as f64 / t as f64 != frac {
                return Err(syntax(line, "fraction does not match g"));
            }
        }
        counts.push(g);
    }
    if counts.is_empty() {
        return Err(syntax(1, "no rows"));
    }
    // an all-zero curve does not pin down the trial count
    let num_trials = num_trials.unwrap_or(1);
    Ok(GCurve { counts, num_trials })
}
