use crate::pomdp::Pomdp;

use super::{SolveLimits, SolveReport};

/// State values and the greedy action per state.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub report: SolveReport,
}

fn q_value(model: &Pomdp, values: &[f64], s: usize, a: usize) -> f64 {
    let future: f64 = model.successors(s, a).iter().map(|&(sp, p)| p * values[sp]).sum();
    model.reward(s, a) + model.discount() * future
}

/// Value iteration on the underlying MDP (states observed exactly), from
/// zero, until `max_s |V_t(s) - V_{t-1}(s)| <= epsilon` or the iteration cap
/// in `limits` is reached.
pub fn mdp_value_iteration(model: &Pomdp, epsilon: f64, limits: &SolveLimits) -> MdpSolution {
    let start = std::time::Instant::now();
    let (ns, na) = (model.num_states(), model.num_actions());
    let mut values = vec![0.0; ns];
    let mut report = SolveReport::default();
    while report.iterations < limits.max_iterations {
        let next: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|a| q_value(model, &values, s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let residual = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        values = next;
        report.record(residual, ns);
        if residual <= epsilon {
            report.converged = true;
            break;
        }
    }
    let policy = (0..ns)
        .map(|s| {
            let mut best = 0;
            let mut best_q = q_value(model, &values, s, 0);
            for a in 1..na {
                let q = q_value(model, &values, s, a);
                if q > best_q {
                    best = a;
                    best_q = q;
                }
            }
            best
        })
        .collect();
    report.elapsed_secs = start.elapsed().as_secs_f64();
    MdpSolution { values, policy, report }
}
