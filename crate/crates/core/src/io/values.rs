//! Value function files.
//!
//! ```text
//! kind: per-region
//! states: 3
//! radius: 1            # optional
//! region: 0 1
//! region: 1 2
//! V: 0 1 0.5 0.25      # V: <region> <action> <value per region member>
//! V: 1 0 0 1
//! ```
//!
//! A global value function uses `kind: global`, no `region:` lines, and
//! `V: * <action> <value per state>`.

use std::fmt::Write;

use crate::region::RegionSystem;
use crate::solver::{AlphaVector, RegionValues, ValueFunction};

use super::{content_lines, parse_f64, parse_usize, syntax, FormatError};

pub fn parse_value_function(text: &str) -> Result<ValueFunction, FormatError> {
    let mut kind: Option<(usize, bool)> = None;
    let mut num_states = None;
    let mut radius = None;
    let mut regions: Vec<Vec<usize>> = Vec::new();
    let mut rows: Vec<(usize, Option<usize>, AlphaVector)> = Vec::new();

    for (line, content) in content_lines(text) {
        let (key, value) = content
            .split_once(':')
            .ok_or_else(|| syntax(line, format!("expected `key: value`, found `{content}`")))?;
        let fields: Vec<&str> = value.split_whitespace().collect();
        match key.trim() {
            "kind" => match fields.as_slice() {
                ["global"] => kind = Some((line, false)),
                ["per-region"] => kind = Some((line, true)),
                _ => return Err(syntax(line, "expected `kind: global` or `kind: per-region`")),
            },
            "states" => match fields.as_slice() {
                [n] => num_states = Some(parse_usize(n, line)?),
                _ => return Err(syntax(line, "expected `states: <count>`")),
            },
            "radius" => match fields.as_slice() {
                [k] => radius = Some(parse_usize(k, line)?),
                _ => return Err(syntax(line, "expected `radius: <k>`")),
            },
            "region" => {
                regions.push(fields.iter().map(|t| parse_usize(t, line)).collect::<Result<_, _>>()?);
            }
            "V" => {
                let [target, action, values @ ..] = fields.as_slice() else {
                    return Err(syntax(line, "expected `V: <region|*> <action> <values>`"));
                };
                let region = match *target {
                    "*" => None,
                    r => Some(parse_usize(r, line)?),
                };
                let action = parse_usize(action, line)?;
                let values = values.iter().map(|t| parse_f64(t, line)).collect::<Result<Vec<_>, _>>()?;
                rows.push((line, region, AlphaVector::new(values, action)));
            }
            other => return Err(syntax(line, format!("unknown key `{other}`"))),
        }
    }

    let Some((kind_line, per_region)) = kind else {
        return Err(syntax(1, "missing `kind:` header"));
    };
    let n = num_states.ok_or_else(|| syntax(kind_line, "missing `states:` header"))?;
    if !per_region {
        if !regions.is_empty() {
            return Err(syntax(kind_line, "a global value function has no regions"));
        }
        let mut vectors = Vec::with_capacity(rows.len());
        for (line, region, v) in rows {
            if region.is_some() {
                return Err(syntax(line, "global vectors use `*` as their region"));
            }
            if v.values.len() != n {
                return Err(syntax(line, format!("vector has {} values, expected {n}", v.values.len())));
            }
            vectors.push(v);
        }
        if vectors.is_empty() {
            return Err(syntax(kind_line, "no vectors"));
        }
        return Ok(ValueFunction::Global(vectors));
    }

    let system = RegionSystem::new(n, regions, radius)?;
    let mut sets = vec![Vec::new(); system.len()];
    for (line, region, v) in rows {
        let Some(r) = region.filter(|&r| r < system.len()) else {
            return Err(syntax(line, "vector names no valid region"));
        };
        let expected = system.region(r).len();
        if v.values.len() != expected {
            return Err(syntax(line, format!("vector has {} values, region {r} has {expected} members", v.values.len())));
        }
        sets[r].push(v);
    }
    Ok(ValueFunction::PerRegion(RegionValues::new(system, sets)?))
}

pub fn serialize_value_function(rep: &ValueFunction) -> String {
    let mut out = String::new();
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    match rep {
        ValueFunction::Global(vectors) => {
            let _ = writeln!(out, "kind: global");
            let _ = writeln!(out, "states: {}", rep.num_states());
            for v in vectors {
                let _ = writeln!(out, "V: * {} {}", v.action, join(&v.values));
            }
        }
        ValueFunction::PerRegion(rv) => {
            let system = rv.system();
            let _ = writeln!(out, "kind: per-region");
            let _ = writeln!(out, "states: {}", system.num_states());
            if let Some(k) = system.radius() {
                let _ = writeln!(out, "radius: {k}");
            }
            for r in system.regions() {
                let members: Vec<String> = r.members().iter().map(usize::to_string).collect();
                let _ = writeln!(out, "region: {}", members.join(" "));
            }
            for (r, set) in rv.sets().iter().enumerate() {
                for v in set {
                    let _ = writeln!(out, "V: {r} {} {}", v.action, join(&v.values));
                }
            }
        }
    }
    out
}
