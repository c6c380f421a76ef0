//! Region files: a `states:` header, then one region per line as state
//! indices. An optional `radius: <k>` header records how the system was
//! built.
//!
//! ```text
//! radius: 1
//! states: 4
//! 0 1
//! 1 2 3
//! ```

use std::fmt::Write;

use crate::region::RegionSystem;

use super::{content_lines, parse_usize, syntax, FormatError};

pub fn parse_regions(text: &str) -> Result<RegionSystem, FormatError> {
    let mut radius = None;
    let mut num_states = None;
    let mut regions = Vec::new();
    for (line, content) in content_lines(text) {
        if let Some((key, value)) = content.split_once(':') {
            let slot = match key.trim() {
                "radius" => &mut radius,
                "states" => &mut num_states,
                other => return Err(syntax(line, format!("unknown key `{other}`"))),
            };
            if !regions.is_empty() {
                return Err(syntax(line, "headers must come before regions"));
            }
            *slot = Some(parse_usize(value.trim(), line)?);
            continue;
        }
        let members = content
            .split_whitespace()
            .map(|t| parse_usize(t, line))
            .collect::<Result<Vec<_>, _>>()?;
        regions.push(members);
    }
    let n = num_states.ok_or_else(|| syntax(1, "missing `states:` header"))?;
    Ok(RegionSystem::new(n, regions, radius)?)
}

pub fn serialize_regions(system: &RegionSystem) -> String {
    let mut out = String::new();
    if let Some(k) = system.radius() {
        let _ = writeln!(out, "radius: {k}");
    }
    let _ = writeln!(out, "states: {}", system.num_states());
    for r in system.regions() {
        let members: Vec<String> = r.members().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{}", members.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::tests::random_model;
    use crate::region::{radius_k_system, RegionError};
    use proptest::prelude::*;

    #[test]
    fn parses_with_comments() {
        let sys = parse_regions("# two regions\nradius: 1\nstates: 3\n0 1\n1 2 # tail\n").unwrap();
        assert_eq!(sys.len(), 2);
        assert_eq!(sys.radius(), Some(1));
        assert_eq!(sys.region(1).members(), &[1, 2]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_regions("states: 3\n0 1\n"), Err(FormatError::Regions(RegionError::Uncovered(2)))));
        assert!(matches!(parse_regions("states: 3\n0 x\n"), Err(FormatError::Syntax { line: 2, .. })));
        assert!(matches!(parse_regions("0 1\n"), Err(FormatError::Syntax { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn round_trip(seed in any::<u64>(), ns in 1usize..7, k in 0usize..3) {
            let m = random_model(seed, ns, 2, 2, 0.9);
            let sys = radius_k_system(&m, k);
            let text = serialize_regions(&sys);
            prop_assert_eq!(parse_regions(&text).unwrap(), sys);
        }
    }
}
