//! Exact dynamic-programming update over the whole belief simplex
//! (incremental pruning). Only practical for very small models.

use std::time::Instant;

use crate::pomdp::Pomdp;

use super::prune::{cross_sum, prune_until, set_residual};
use super::{AlphaVector, SolveLimits, SolveReport, SolverError, ValueFunction};

fn backproject(model: &Pomdp, v: &[f64], a: usize, o: usize) -> Vec<f64> {
    let gamma = model.discount();
    (0..model.num_states())
        .map(|s| {
            gamma
                * model
                    .successors(s, a)
                    .iter()
                    .map(|&(sp, p)| p * model.observation(sp, a, s, o) * v[sp])
                    .sum::<f64>()
        })
        .collect()
}

const TIME_LIMIT: &str = "time limit";

fn update_set(
    model: &Pomdp,
    current: &[AlphaVector],
    limits: &SolveLimits,
    deadline: Option<Instant>,
) -> Result<Vec<AlphaVector>, String> {
    let prune = |v| prune_until(v, limits.prune_tolerance, deadline).ok_or_else(|| TIME_LIMIT.to_string());
    let ns = model.num_states();
    let mut all = Vec::new();
    for a in 0..model.num_actions() {
        let reward: Vec<f64> = (0..ns).map(|s| model.reward(s, a)).collect();
        let mut acc = vec![AlphaVector::new(reward, a)];
        for o in 0..model.num_observations() {
            let projected: Vec<AlphaVector> = current
                .iter()
                .map(|v| AlphaVector::new(backproject(model, &v.values, a, o), a))
                .collect();
            if projected.iter().all(|v| v.values.iter().all(|&x| x == 0.0)) {
                continue;
            }
            let projected = prune(projected)?;
            acc = prune(cross_sum(&acc, &projected))?;
            if acc.len() > limits.max_vectors {
                return Err(format!("{} vectors exceed the cap of {}", acc.len(), limits.max_vectors));
            }
            if deadline.is_some_and(|d| Instant::now() > d) {
                return Err(TIME_LIMIT.to_string());
            }
        }
        all.extend(acc);
    }
    prune(all)
}

/// One exact Bellman backup of a global value function.
pub fn exact_dp_update(model: &Pomdp, rep: &ValueFunction) -> Result<ValueFunction, SolverError> {
    let ValueFunction::Global(vs) = rep else {
        return Err(SolverError::WrongRepresentation);
    };
    if vs.first().map_or(true, |v| v.values.len() != model.num_states()) {
        return Err(SolverError::Dimension {
            expected: model.num_states(),
            got: vs.first().map_or(0, |v| v.values.len()),
        });
    }
    let limits = SolveLimits { max_vectors: usize::MAX, ..SolveLimits::default() };
    Ok(ValueFunction::Global(update_set(model, vs, &limits, None).expect("uncapped")))
}

/// Exact value iteration from zero until the Bellman residual is at most
/// `epsilon`.
pub fn exact_value_iteration(
    model: &Pomdp,
    epsilon: f64,
    limits: &SolveLimits,
) -> Result<(ValueFunction, SolveReport), SolverError> {
    let start = Instant::now();
    let deadline = limits.time_limit.map(|t| start + t);
    let mut report = SolveReport::default();
    let mut current = vec![AlphaVector::zeros(model.num_states())];
    loop {
        let fail = |reason: String, mut report: SolveReport| {
            report.elapsed_secs = start.elapsed().as_secs_f64();
            Err(SolverError::ResourceLimit { reason, report })
        };
        if report.iterations >= limits.max_iterations {
            return fail(format!("iteration cap {}", limits.max_iterations), report);
        }
        let next = match update_set(model, &current, limits, deadline) {
            Ok(n) => n,
            Err(reason) if reason == TIME_LIMIT => {
                return fail(format!("time limit {:?}", limits.time_limit.unwrap_or_default()), report)
            }
            Err(reason) => return fail(reason, report),
        };
        let residual = set_residual(&current, &next);
        report.record(residual, next.len());
        current = next;
        if residual <= epsilon {
            report.converged = true;
            break;
        }
    }
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok((ValueFunction::Global(current), report))
}
