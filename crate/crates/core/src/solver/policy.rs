//! One-step lookahead policies.
//!
//! The same routine realizes three policies depending on where observations
//! come from: the plain model with a global value function, the
//! region-observable model on region-supported beliefs, and the
//! region-observable lookahead applied to arbitrary beliefs, which is how the
//! oracle-trained value function drives an agent that has no oracle.

use std::cell::Cell;

use crate::pomdp::{Belief, Pomdp};
use crate::region::{BranchBuffer, RegionObservablePomdp};

use super::{SolverError, ValueFunction};

/// Ties within this relative margin go to the smaller action index.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub enum Lookahead<'a> {
    /// Observations from the plain model.
    Plain(&'a Pomdp),
    /// Composite observations; the belief must be region-supported.
    Oracle(&'a RegionObservablePomdp),
    /// Composite observations for any belief.
    Approximate(&'a RegionObservablePomdp),
}

impl Lookahead<'_> {
    fn base(&self) -> &Pomdp {
        match self {
            Lookahead::Plain(m) => m,
            Lookahead::Oracle(m) | Lookahead::Approximate(m) => m.base(),
        }
    }
}

/// `r(b, a) + gamma * sum_z P(z | b, a) V(b+)` for every action, skipping
/// zero-probability observations.
pub fn lookahead_values(view: Lookahead<'_>, rep: &ValueFunction, b: &Belief) -> Result<Vec<f64>, SolverError> {
    let base = view.base();
    if b.len() != base.num_states() {
        return Err(SolverError::Dimension { expected: base.num_states(), got: b.len() });
    }
    if let Lookahead::Oracle(mp) = view {
        if mp.system().supporting(b.probs()).is_empty() {
            return Err(SolverError::UnsupportedBelief);
        }
    }
    let (mut buffer, mut positions) = SCRATCH.with(|c| c.take());
    let out = lookahead_with(view, rep, b, &mut buffer, &mut positions);
    SCRATCH.with(|c| c.set((buffer, positions)));
    out
}

thread_local! {
    static SCRATCH: Cell<(BranchBuffer, Vec<usize>)> = Cell::new(Default::default());
}

fn lookahead_with(
    view: Lookahead<'_>,
    rep: &ValueFunction,
    b: &Belief,
    buffer: &mut BranchBuffer,
    positions: &mut Vec<usize>,
) -> Result<Vec<f64>, SolverError> {
    let base = view.base();
    let gamma = base.discount();
    let ns = base.num_states();
    let mut out = Vec::with_capacity(base.num_actions());
    for a in 0..base.num_actions() {
        let mut future = 0.0;
        match view {
            Lookahead::Plain(m) => {
                let mut per_obs = vec![vec![0.0; ns]; m.num_observations()];
                let mut seen = vec![false; m.num_observations()];
                for (s, &bs) in b.probs().iter().enumerate() {
                    if bs == 0.0 {
                        continue;
                    }
                    for &(sp, pt) in m.successors(s, a) {
                        for &(o, po) in m.observation_row(sp, a, s) {
                            let w = bs * pt * po;
                            if w > 0.0 {
                                per_obs[o][sp] += w;
                                seen[o] = true;
                            }
                        }
                    }
                }
                for (mass, _) in per_obs.iter().zip(&seen).filter(|(_, &s)| s) {
                    // P(o | b, a) V(b+) = V(mass) by positive homogeneity
                    future += rep.eval_mass(mass)?;
                }
            }
            Lookahead::Oracle(mp) | Lookahead::Approximate(mp) => {
                mp.branch_into(b, a, buffer);
                for (_, entries) in buffer.branches() {
                    future += match rep {
                        ValueFunction::PerRegion(rv) if rv.system().num_states() == ns => {
                            rv.eval_sparse(entries, positions)?
                        }
                        _ => {
                            let mut mass = vec![0.0; ns];
                            entries.iter().for_each(|&(s, w)| mass[s] = w);
                            rep.eval_mass(&mass)?
                        }
                    };
                }
            }
        }
        out.push(base.belief_reward(b, a) + gamma * future);
    }
    Ok(out)
}

/// Greedy action with respect to `rep`; ties go to the smallest index.
pub fn greedy_action(view: Lookahead<'_>, rep: &ValueFunction, b: &Belief) -> Result<usize, SolverError> {
    let q = lookahead_values(view, rep, b)?;
    let mut best = 0;
    for a in 1..q.len() {
        if q[a] > q[best] + TIE_TOL * q[best].abs().max(1.0) {
            best = a;
        }
    }
    Ok(best)
}
