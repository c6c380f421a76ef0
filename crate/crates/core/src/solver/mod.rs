//! Value iteration over piecewise-linear convex value functions.
//!
//! A value function is a finite set of alpha vectors; its value at a belief is
//! the largest inner product. The region-observable solver keeps one vector
//! set per region, each defined only over that region's member states, since
//! every belief reachable in the region-observable model is supported by the
//! reported region.

mod exact;
mod mdp;
mod policy;
mod prune;
mod restricted;

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::pomdp::Belief;
use crate::region::RegionSystem;

pub use exact::{exact_dp_update, exact_value_iteration};
pub use mdp::{mdp_value_iteration, MdpSolution};
pub use policy::{greedy_action, lookahead_values, Lookahead};
pub use prune::{bellman_residual, cross_sum, prune, prune_until, prune_with, set_residual, PRUNE_TOL};
pub use restricted::{restricted_value_iteration, RestrictedSolver};

/// Default Bellman residual threshold.
pub const DEFAULT_EPSILON: f64 = 0.001;

/// Default discount factor.
pub const DEFAULT_DISCOUNT: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("belief is not fully supported by any region")]
    UnsupportedBelief,
    #[error("value function covers {got} states, model has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("value function representation does not fit this operation")]
    WrongRepresentation,
    #[error("resource limit reached ({reason}) after {} iterations", report.iterations)]
    ResourceLimit { reason: String, report: SolveReport },
}

/// A linear function over a support (the full state set or one region),
/// tagged with the action whose backup produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub values: Vec<f64>,
    pub action: usize,
}

impl AlphaVector {
    pub fn new(values: Vec<f64>, action: usize) -> Self {
        AlphaVector { values, action }
    }

    pub fn zeros(len: usize) -> Self {
        AlphaVector { values: vec![0.0; len], action: 0 }
    }

    pub fn dot(&self, mass: &[f64]) -> f64 {
        self.values.iter().zip(mass).map(|(v, m)| v * m).sum()
    }
}

/// Per-region vector sets over a region system.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionValues {
    system: RegionSystem,
    sets: Vec<Vec<AlphaVector>>,
}

impl RegionValues {
    /// `sets[r]` holds vectors over the members of region `r`, in member order.
    pub fn new(system: RegionSystem, sets: Vec<Vec<AlphaVector>>) -> Result<Self, SolverError> {
        if sets.len() != system.len() {
            return Err(SolverError::WrongRepresentation);
        }
        for (r, set) in system.regions().iter().zip(&sets) {
            if set.is_empty() || set.iter().any(|v| v.values.len() != r.len()) {
                return Err(SolverError::Dimension { expected: r.len(), got: set.first().map_or(0, |v| v.values.len()) });
            }
        }
        Ok(RegionValues { system, sets })
    }

    /// The zero function: one zero vector per region.
    pub fn zeros(system: RegionSystem) -> Self {
        let sets = system.regions().iter().map(|r| vec![AlphaVector::zeros(r.len())]).collect();
        RegionValues { system, sets }
    }

    pub fn system(&self) -> &RegionSystem {
        &self.system
    }

    pub fn sets(&self) -> &[Vec<AlphaVector>] {
        &self.sets
    }

    pub fn set(&self, region: usize) -> &[AlphaVector] {
        &self.sets[region]
    }

    /// Best inner product of region `r`'s vectors with the (unnormalized)
    /// mass, and the maximizing vector.
    fn eval_region(&self, r: usize, mass: &[f64]) -> (f64, &AlphaVector) {
        let members = self.system.region(r).members();
        let mut best: Option<(f64, &AlphaVector)> = None;
        for v in &self.sets[r] {
            let x: f64 = members.iter().zip(&v.values).map(|(&s, &val)| mass[s] * val).sum();
            if best.map_or(true, |(b, _)| x > b) {
                best = Some((x, v));
            }
        }
        best.expect("vector sets are never empty")
    }

    /// [`eval_mass`](Self::eval_mass) for `(state, weight)` pairs with
    /// positive weights; `positions` is scratch space.
    pub fn eval_sparse(&self, entries: &[(usize, f64)], positions: &mut Vec<usize>) -> Result<f64, SolverError> {
        let Some(&(first, _)) = entries.first() else {
            return Err(SolverError::UnsupportedBelief);
        };
        let mut best: Option<f64> = None;
        'regions: for &r in self.system.containing(first) {
            let region = self.system.region(r);
            positions.clear();
            for &(s, _) in entries {
                match region.position(s) {
                    Some(i) => positions.push(i),
                    None => continue 'regions,
                }
            }
            for v in &self.sets[r] {
                let x: f64 = positions.iter().zip(entries).map(|(&i, &(_, w))| w * v.values[i]).sum();
                if best.map_or(true, |b| x > b) {
                    best = Some(x);
                }
            }
        }
        best.ok_or(SolverError::UnsupportedBelief)
    }

    /// Value of a non-negative mass vector: the best over every region that
    /// fully supports it.
    pub fn eval_mass(&self, mass: &[f64]) -> Result<f64, SolverError> {
        self.best_vector(mass).map(|(v, _, _)| v)
    }

    /// Best value, region id and vector for a supported mass vector.
    pub fn best_vector(&self, mass: &[f64]) -> Result<(f64, usize, &AlphaVector), SolverError> {
        let regions = self.system.supporting(mass);
        let mut best: Option<(f64, usize, &AlphaVector)> = None;
        for r in regions {
            let (x, v) = self.eval_region(r, mass);
            if best.map_or(true, |(b, _, _)| x > b) {
                best = Some((x, r, v));
            }
        }
        best.ok_or(SolverError::UnsupportedBelief)
    }

    pub fn vector_count(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// A solved (or partially solved) value function.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueFunction {
    /// Vectors over the full state set.
    Global(Vec<AlphaVector>),
    /// Vectors per region, valid on beliefs the region fully supports.
    PerRegion(RegionValues),
}

impl ValueFunction {
    /// Zero function over `num_states` states.
    pub fn zero_global(num_states: usize) -> Self {
        ValueFunction::Global(vec![AlphaVector::zeros(num_states)])
    }

    /// Value at a belief.
    pub fn value_at(&self, b: &Belief) -> Result<f64, SolverError> {
        self.eval_mass(b.probs())
    }

    /// Value at an unnormalized non-negative mass vector (positively
    /// homogeneous, so `eval_mass(c * b) = c * value_at(b)`).
    pub fn eval_mass(&self, mass: &[f64]) -> Result<f64, SolverError> {
        match self {
            ValueFunction::Global(vs) => {
                if let Some(v) = vs.first() {
                    if v.values.len() != mass.len() {
                        return Err(SolverError::Dimension { expected: mass.len(), got: v.values.len() });
                    }
                }
                Ok(vs.iter().map(|v| v.dot(mass)).fold(f64::NEG_INFINITY, f64::max))
            }
            ValueFunction::PerRegion(rv) => {
                if rv.system.num_states() != mass.len() {
                    return Err(SolverError::Dimension { expected: mass.len(), got: rv.system.num_states() });
                }
                rv.eval_mass(mass)
            }
        }
    }

    pub fn vector_count(&self) -> usize {
        match self {
            ValueFunction::Global(v) => v.len(),
            ValueFunction::PerRegion(rv) => rv.vector_count(),
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            ValueFunction::Global(v) => v.first().map_or(0, |x| x.values.len()),
            ValueFunction::PerRegion(rv) => rv.system.num_states(),
        }
    }
}

/// Iteration log of a value-iteration run.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub vector_counts: Vec<usize>,
    pub converged: bool,
    pub elapsed_secs: f64,
}

impl SolveReport {
    fn record(&mut self, residual: f64, vectors: usize) {
        self.iterations += 1;
        self.residual_history.push(residual);
        self.final_residual = residual;
        self.vector_counts.push(vectors);
    }
}

/// Caps that turn an intractable solve into a reported failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveLimits {
    pub max_iterations: usize,
    /// Cap on the vectors held by any single region (or by a global set),
    /// including intermediate cross sums.
    pub max_vectors: usize,
    pub time_limit: Option<Duration>,
    /// Witness margin at or below which a vector counts as dominated.
    pub prune_tolerance: f64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits { max_iterations: 10_000, max_vectors: 20_000, time_limit: None, prune_tolerance: PRUNE_TOL }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vector_is_zero_everywhere() {
        let vf = ValueFunction::zero_global(3);
        assert_eq!(vf.value_at(&Belief::new(vec![0.2, 0.3, 0.5]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn max_of_two_vectors() {
        let vf = ValueFunction::Global(vec![AlphaVector::new(vec![1.0, 0.0], 0), AlphaVector::new(vec![0.0, 1.0], 1)]);
        let v = vf.value_at(&Belief::new(vec![0.4, 0.6]).unwrap()).unwrap();
        assert!((v - 0.6).abs() < 1e-15);
    }

    #[test]
    fn per_region_takes_best_supporting_region() {
        let sys = RegionSystem::new(3, vec![vec![0, 1], vec![1, 2]], None).unwrap();
        let rv = RegionValues::new(
            sys,
            vec![vec![AlphaVector::new(vec![0.0, 2.0], 0)], vec![AlphaVector::new(vec![3.0, 0.0], 1)]],
        )
        .unwrap();
        let vf = ValueFunction::PerRegion(rv);
        // point mass on s1 is supported by both regions
        assert_eq!(vf.value_at(&Belief::point_mass(3, 1)).unwrap(), 3.0);
        assert_eq!(vf.value_at(&Belief::point_mass(3, 0)).unwrap(), 0.0);
        let spread = Belief::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(vf.value_at(&spread), Err(SolverError::UnsupportedBelief));
    }
}
