//! Model files.
//!
//! ```text
//! discount: 0.95
//! states: 2            # a count, or a list of names
//! actions: stay go
//! observations: dark light
//! start: 0.5 0.5       # optional; uniform if omitted
//! T: go 0 1 1.0        # T: <a> <s> <s'> <p>
//! O: go 1 light 0.8    # O: <a> <s'> <o> <p>, or O: <a> <s-> <s'> <o> <p>
//! R: stay 1 1.0        # R: <a> <s> <value>
//! I: go 0 1            # I: <a> <s> <s'> intended effect
//! ```
//!
//! Headers come before rows. Tokens may be names or indices. Omitted rows
//! are zero (and no intended effect). A row may appear only once.

use std::collections::{HashMap, HashSet};
use std::fmt::Write;

use crate::pomdp::{ObservationTable, Pomdp, PomdpTables};

use super::{content_lines, parse_f64, parse_usize, syntax, FormatError};

struct Names {
    list: Vec<String>,
    index: HashMap<String, usize>,
}

impl Names {
    fn parse(value: &str, line: usize, what: &str) -> Result<Self, FormatError> {
        let tokens: Vec<&str> = value.split_whitespace().collect();
        let list: Vec<String> = match tokens.as_slice() {
            [] => return Err(syntax(line, format!("no {what} given"))),
            [one] if one.parse::<usize>().is_ok() => {
                let n = parse_usize(one, line)?;
                if n == 0 {
                    return Err(syntax(line, format!("need at least one of {what}")));
                }
                (0..n).map(|i| i.to_string()).collect()
            }
            many => many.iter().map(|s| s.to_string()).collect(),
        };
        let mut index = HashMap::new();
        for (i, name) in list.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(syntax(line, format!("{what} name `{name}` is repeated")));
            }
        }
        Ok(Names { list, index })
    }

    fn resolve(&self, token: &str, line: usize, what: &str) -> Result<usize, FormatError> {
        if let Some(&i) = self.index.get(token) {
            return Ok(i);
        }
        match token.parse::<usize>() {
            Ok(i) if i < self.list.len() => Ok(i),
            _ => Err(syntax(line, format!("unknown {what} `{token}`"))),
        }
    }
}

fn is_counted(names: &[String]) -> bool {
    names.iter().enumerate().all(|(i, n)| *n == i.to_string())
}

/// Parses a model file and validates the result.
pub fn parse_model(text: &str) -> Result<Pomdp, FormatError> {
    let mut discount = None;
    let mut states: Option<Names> = None;
    let mut actions: Option<Names> = None;
    let mut observations: Option<Names> = None;
    let mut start: Option<(usize, Vec<f64>)> = None;
    let mut tables: Option<PomdpTables> = None;
    let mut seen: HashSet<(char, usize, usize, usize, usize)> = HashSet::new();
    let mut obs_form: Option<(usize, usize)> = None;

    for (line, content) in content_lines(text) {
        let (key, value) = content
            .split_once(':')
            .ok_or_else(|| syntax(line, format!("expected `key: value`, found `{content}`")))?;
        let key = key.trim();
        let fields: Vec<&str> = value.split_whitespace().collect();
        let header_done = tables.is_some();
        match key {
            "discount" | "states" | "actions" | "observations" if header_done => {
                return Err(syntax(line, format!("`{key}` must come before any table row")));
            }
            "discount" => {
                if discount.is_some() {
                    return Err(syntax(line, "duplicate `discount`"));
                }
                match fields.as_slice() {
                    [g] => discount = Some(parse_f64(g, line)?),
                    _ => return Err(syntax(line, "expected `discount: <value>`")),
                }
            }
            "states" | "actions" | "observations" => {
                let slot = match key {
                    "states" => &mut states,
                    "actions" => &mut actions,
                    _ => &mut observations,
                };
                if slot.is_some() {
                    return Err(syntax(line, format!("duplicate `{key}`")));
                }
                *slot = Some(Names::parse(value, line, key)?);
            }
            "start" => {
                if start.is_some() {
                    return Err(syntax(line, "duplicate `start`"));
                }
                let probs = fields.iter().map(|t| parse_f64(t, line)).collect::<Result<Vec<_>, _>>()?;
                start = Some((line, probs));
            }
            "T" | "O" | "R" | "I" => {
                if tables.is_none() {
                    let (Some(g), Some(s), Some(a), Some(o)) = (discount, &states, &actions, &observations) else {
                        return Err(syntax(
                            line,
                            "`discount`, `states`, `actions` and `observations` must come before table rows",
                        ));
                    };
                    tables = Some(PomdpTables::zeros(s.list.clone(), a.list.clone(), o.list.clone(), g));
                }
                let t = tables.as_mut().expect("created above");
                let (s, a, o) = (states.as_ref().unwrap(), actions.as_ref().unwrap(), observations.as_ref().unwrap());
                let ns = s.list.len();
                let no = o.list.len();
                let tag = key.chars().next().unwrap();
                let mut claim = |k: (usize, usize, usize, usize)| {
                    if seen.insert((tag, k.0, k.1, k.2, k.3)) {
                        Ok(())
                    } else {
                        Err(syntax(line, format!("duplicate {key} row")))
                    }
                };
                match (key, fields.as_slice()) {
                    ("T", [act, from, to, p]) => {
                        let k = (a.resolve(act, line, "action")?, s.resolve(from, line, "state")?, s.resolve(to, line, "state")?);
                        claim((k.0, k.1, k.2, 0))?;
                        t.set_transition(k.0, k.1, k.2, parse_f64(p, line)?);
                    }
                    ("O", [act, to, obs, p]) => {
                        if obs_form.is_some_and(|(n, _)| n == 5) {
                            return Err(syntax(line, "mixes 4-field and 5-field O rows"));
                        }
                        obs_form.get_or_insert((4, line));
                        let k = (a.resolve(act, line, "action")?, s.resolve(to, line, "state")?, o.resolve(obs, line, "observation")?);
                        claim((k.0, 0, k.1, k.2))?;
                        t.set_observation(k.0, k.1, k.2, parse_f64(p, line)?);
                    }
                    ("O", [act, from, to, obs, p]) => {
                        match obs_form {
                            Some((4, _)) => return Err(syntax(line, "mixes 4-field and 5-field O rows")),
                            None => {
                                obs_form = Some((5, line));
                                let na = a.list.len();
                                t.observation = ObservationTable::PreviousState(vec![0.0; na * ns * ns * no]);
                            }
                            _ => {}
                        }
                        let k = (
                            a.resolve(act, line, "action")?,
                            s.resolve(from, line, "state")?,
                            s.resolve(to, line, "state")?,
                            o.resolve(obs, line, "observation")?,
                        );
                        claim(k)?;
                        let p = parse_f64(p, line)?;
                        if let ObservationTable::PreviousState(v) = &mut t.observation {
                            v[((k.0 * ns + k.1) * ns + k.2) * no + k.3] = p;
                        }
                    }
                    ("R", [act, st, r]) => {
                        let k = (a.resolve(act, line, "action")?, s.resolve(st, line, "state")?);
                        claim((k.0, k.1, 0, 0))?;
                        t.set_reward(k.0, k.1, parse_f64(r, line)?);
                    }
                    ("I", [act, from, to]) => {
                        let k = (a.resolve(act, line, "action")?, s.resolve(from, line, "state")?);
                        claim((k.0, k.1, 0, 0))?;
                        t.set_intended(k.0, k.1, Some(s.resolve(to, line, "state")?));
                    }
                    _ => return Err(syntax(line, format!("wrong number of fields for a {key} row"))),
                }
            }
            other => return Err(syntax(line, format!("unknown key `{other}`"))),
        }
    }

    let mut t = match tables {
        Some(t) => t,
        None => {
            let (Some(g), Some(s), Some(a), Some(o)) = (discount, states, actions, observations) else {
                let last = text.lines().count().max(1);
                return Err(syntax(last, "missing one of `discount`, `states`, `actions`, `observations`"));
            };
            PomdpTables::zeros(s.list, a.list, o.list, g)
        }
    };
    if let Some((line, probs)) = start {
        if probs.len() != t.state_names.len() {
            return Err(syntax(
                line,
                format!("`start` has {} entries, expected {}", probs.len(), t.state_names.len()),
            ));
        }
        t.initial = probs;
    }
    Ok(Pomdp::new(t)?)
}

/// Canonical text form: names, every nonzero entry in index order, shortest
/// round-trip decimals.
pub fn serialize_model(model: &Pomdp) -> String {
    let t = model.to_tables();
    let (ns, na, no) = (t.state_names.len(), t.action_names.len(), t.observation_names.len());
    let list = |names: &[String]| if is_counted(names) { names.len().to_string() } else { names.join(" ") };
    let (sn, an, on) = (&t.state_names, &t.action_names, &t.observation_names);

    let mut out = String::new();
    let _ = writeln!(out, "discount: {}", t.discount);
    let _ = writeln!(out, "states: {}", list(sn));
    let _ = writeln!(out, "actions: {}", list(an));
    let _ = writeln!(out, "observations: {}", list(on));
    let start: Vec<String> = t.initial.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(out, "start: {}", start.join(" "));
    for a in 0..na {
        for s in 0..ns {
            for next in 0..ns {
                let p = t.transition[(a * ns + s) * ns + next];
                if p != 0.0 {
                    let _ = writeln!(out, "T: {} {} {} {p}", an[a], sn[s], sn[next]);
                }
            }
        }
    }
    match &t.observation {
        ObservationTable::Independent(v) => {
            for a in 0..na {
                for next in 0..ns {
                    for o in 0..no {
                        let p = v[(a * ns + next) * no + o];
                        if p != 0.0 {
                            let _ = writeln!(out, "O: {} {} {} {p}", an[a], sn[next], on[o]);
                        }
                    }
                }
            }
        }
        ObservationTable::PreviousState(v) => {
            for a in 0..na {
                for prev in 0..ns {
                    for next in 0..ns {
                        for o in 0..no {
                            let p = v[((a * ns + prev) * ns + next) * no + o];
                            if p != 0.0 {
                                let _ = writeln!(out, "O: {} {} {} {} {p}", an[a], sn[prev], sn[next], on[o]);
                            }
                        }
                    }
                }
            }
        }
    }
    for a in 0..na {
        for s in 0..ns {
            let r = t.reward[a * ns + s];
            if r != 0.0 {
                let _ = writeln!(out, "R: {} {} {r}", an[a], sn[s]);
            }
        }
    }
    for a in 0..na {
        for s in 0..ns {
            if let Some(next) = t.intended[a * ns + s] {
                let _ = writeln!(out, "I: {} {} {}", an[a], sn[s], sn[next]);
            }
        }
    }
    out
}
