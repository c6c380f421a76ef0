//! Line-oriented text formats.
//!
//! Every format ignores blank lines and `#` comments, reports the first
//! problem with its line number, and serializes probabilities and values as
//! the shortest decimal that reads back to the same double.

mod model;
mod regions;
mod results;
mod values;

pub use model::{parse_model, serialize_model};
pub use regions::{parse_regions, serialize_regions};
pub use results::{parse_curve_csv, serialize_curve_csv};
pub use values::{parse_value_function, serialize_value_function};

use thiserror::Error;

use crate::pomdp::ModelError;
use crate::region::RegionError;
use crate::solver::SolverError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Regions(#[from] RegionError),
    #[error(transparent)]
    Values(#[from] SolverError),
}

pub(crate) fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax { line, message: message.into() }
}

/// Non-empty lines with comments stripped, numbered from 1.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

pub(crate) fn parse_f64(token: &str, line: usize) -> Result<f64, FormatError> {
    match token.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(syntax(line, format!("expected a finite number, found `{token}`"))),
    }
}

pub(crate) fn parse_usize(token: &str, line: usize) -> Result<usize, FormatError> {
    token
        .parse::<usize>()
        .map_err(|_| syntax(line, format!("expected a non-negative integer, found `{token}`")))
}
