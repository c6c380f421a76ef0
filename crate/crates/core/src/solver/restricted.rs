//! Value iteration restricted to region-supported beliefs.
//!
//! Region `R` keeps vectors over its own members. A backup of `R` under
//! action `a` groups every transition `s -> s+` (with `s` in `R`) and
//! observation `o` by the composite observation `z = (o, R+)` the oracle
//! would report. Each group is a nonnegative kernel
//! `K_z(s, s+) = P(s+ | s, a) P(o | s+, a, s)` from `R` to `R+`, and the
//! backup is
//!
//! ```text
//! r(., a) + gamma * (+)_z { K_z V : V in U(R+) }
//! ```
//!
//! with `(+)` the cross sum. Two reductions are exact and computed once up
//! front: a kernel touching a single target state contributes
//! `K_z[., s+] * max_V V(s+)`, so all such kernels collapse into a fixed
//! offset; and kernels with the same target that are scalar multiples of each
//! other are maximized by the same `V` at every belief, so they merge into
//! their sum.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::region::RegionObservablePomdp;

use super::prune::{cross_sum, prune_until, set_residual};
use super::{AlphaVector, RegionValues, SolveLimits, SolveReport, SolverError, ValueFunction};

const TIME_LIMIT: &str = "time limit";

const PROPORTIONAL_TOL: f64 = 1e-12;

/// Weights on a single target state.
#[derive(Debug, Clone)]
struct ColumnTerm {
    target: usize,
    col: usize,
    weights: Vec<f64>,
}

/// Dense kernel from region members (rows) to target members (columns).
#[derive(Debug, Clone)]
struct MatrixTerm {
    target: usize,
    cols: usize,
    kernel: Vec<f64>,
}

impl MatrixTerm {
    fn apply(&self, v: &[f64], rows: usize, scale: f64) -> Vec<f64> {
        (0..rows)
            .map(|i| {
                scale
                    * self.kernel[i * self.cols..(i + 1) * self.cols]
                        .iter()
                        .zip(v)
                        .map(|(k, x)| k * x)
                        .sum::<f64>()
            })
            .collect()
    }

    fn proportional_to(&self, other: &MatrixTerm) -> bool {
        let max = |k: &[f64]| k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let (ma, mb) = (max(&self.kernel), max(&other.kernel));
        if ma == 0.0 || mb == 0.0 {
            return false;
        }
        self.kernel
            .iter()
            .zip(&other.kernel)
            .all(|(a, b)| (a / ma - b / mb).abs() <= PROPORTIONAL_TOL)
    }
}

#[derive(Debug, Clone)]
struct ActionPlan {
    reward: Vec<f64>,
    columns: Vec<ColumnTerm>,
    matrices: Vec<MatrixTerm>,
}

/// Precomputed backup structure for a region-observable model.
#[derive(Debug, Clone)]
pub struct RestrictedSolver<'a> {
    model: &'a RegionObservablePomdp,
    /// `[region][action]`
    plans: Vec<Vec<ActionPlan>>,
}

impl<'a> RestrictedSolver<'a> {
    pub fn new(model: &'a RegionObservablePomdp) -> Self {
        let plans = model
            .system()
            .regions()
            .par_iter()
            .map(|r| (0..model.base().num_actions()).map(|a| Self::plan(model, r.id(), a)).collect())
            .collect();
        RestrictedSolver { model, plans }
    }

    fn plan(model: &RegionObservablePomdp, region: usize, a: usize) -> ActionPlan {
        let system = model.system();
        let base = model.base();
        let members = system.region(region).members();
        let rows = members.len();

        // (o, target) -> entries (row, col, weight)
        let mut groups: BTreeMap<(usize, usize), Vec<(usize, usize, f64)>> = BTreeMap::new();
        for (i, &s) in members.iter().enumerate() {
            for (next, pt, selection) in model.transitions_with_selection(s, a) {
                for &(o, po) in base.observation_row(next, a, s) {
                    let target = selection[o] as usize;
                    let j = system.region(target).position(next).expect("selected region holds s+");
                    groups.entry((o, target)).or_default().push((i, j, pt * po));
                }
            }
        }

        let mut columns: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let mut matrices: Vec<MatrixTerm> = Vec::new();
        for ((_, target), entries) in groups {
            let first_col = entries[0].1;
            if entries.iter().all(|e| e.1 == first_col) {
                let w = columns.entry((target, first_col)).or_insert_with(|| vec![0.0; rows]);
                for (i, _, p) in entries {
                    w[i] += p;
                }
                continue;
            }
            let cols = system.region(target).len();
            let mut kernel = vec![0.0; rows * cols];
            for (i, j, p) in entries {
                kernel[i * cols + j] += p;
            }
            let term = MatrixTerm { target, cols, kernel };
            match matrices.iter_mut().find(|m| m.target == target && m.proportional_to(&term)) {
                Some(m) => m.kernel.iter_mut().zip(&term.kernel).for_each(|(x, y)| *x += y),
                None => matrices.push(term),
            }
        }

        ActionPlan {
            reward: members.iter().map(|&s| base.reward(s, a)).collect(),
            columns: columns
                .into_iter()
                .map(|((target, col), weights)| ColumnTerm { target, col, weights })
                .collect(),
            matrices,
        }
    }

    pub fn model(&self) -> &RegionObservablePomdp {
        self.model
    }

    /// Number of genuine cross-sum terms per region and action, after the
    /// exact reductions.
    pub fn cross_sum_terms(&self) -> Vec<Vec<usize>> {
        self.plans.iter().map(|p| p.iter().map(|a| a.matrices.len()).collect()).collect()
    }

    fn backup_region(
        &self,
        region: usize,
        current: &RegionValues,
        limits: &SolveLimits,
        deadline: Option<Instant>,
    ) -> Result<Vec<AlphaVector>, String> {
        let gamma = self.model.base().discount();
        let rows = self.model.system().region(region).len();
        let prune = |v| prune_until(v, limits.prune_tolerance, deadline).ok_or_else(|| TIME_LIMIT.to_string());
        let mut all = Vec::new();
        for (a, plan) in self.plans[region].iter().enumerate() {
            let mut offset = plan.reward.clone();
            for c in &plan.columns {
                let best = current
                    .set(c.target)
                    .iter()
                    .map(|v| v.values[c.col])
                    .fold(f64::NEG_INFINITY, f64::max);
                for (o, w) in offset.iter_mut().zip(&c.weights) {
                    *o += gamma * w * best;
                }
            }
            let mut sets = Vec::new();
            for m in &plan.matrices {
                let target = current.set(m.target);
                let projected: Vec<AlphaVector> = target
                    .iter()
                    .map(|v| AlphaVector::new(m.apply(&v.values, rows, gamma), a))
                    .collect();
                let projected = prune(projected)?;
                if projected.len() == 1 {
                    for (o, x) in offset.iter_mut().zip(&projected[0].values) {
                        *o += x;
                    }
                } else {
                    sets.push(projected);
                }
            }
            sets.sort_by_key(Vec::len);
            let mut acc = vec![AlphaVector::new(offset, a)];
            for s in &sets {
                acc = prune(cross_sum(&acc, s))?;
                if acc.len() > limits.max_vectors {
                    return Err(format!(
                        "region {region} holds {} vectors, cap is {}",
                        acc.len(),
                        limits.max_vectors
                    ));
                }
                if deadline.is_some_and(|d| Instant::now() > d) {
                    return Err(TIME_LIMIT.to_string());
                }
            }
            all.extend(acc);
        }
        prune(all)
    }

    /// One restricted Bellman backup of every region, pruning at
    /// [`PRUNE_TOL`](super::PRUNE_TOL).
    pub fn sweep(&self, current: &RegionValues) -> RegionValues {
        let limits = SolveLimits { max_vectors: usize::MAX, ..Default::default() };
        self.try_sweep(current, &limits, None).expect("uncapped sweep")
    }

    fn try_sweep(
        &self,
        current: &RegionValues,
        limits: &SolveLimits,
        deadline: Option<Instant>,
    ) -> Result<RegionValues, String> {
        let sets = (0..self.plans.len())
            .into_par_iter()
            .map(|r| self.backup_region(r, current, limits, deadline))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RegionValues::new(current.system().clone(), sets).expect("backup keeps region shapes"))
    }

    /// Iterate from zero until the residual over region-supported beliefs is
    /// at most `epsilon`.
    pub fn solve(&self, epsilon: f64, limits: &SolveLimits) -> Result<(ValueFunction, SolveReport), SolverError> {
        let start = Instant::now();
        let deadline = limits.time_limit.map(|t| start + t);
        let mut report = SolveReport::default();
        let mut current = RegionValues::zeros(self.model.system().clone());
        let fail = |reason: String, mut report: SolveReport| {
            report.elapsed_secs = start.elapsed().as_secs_f64();
            Err(SolverError::ResourceLimit { reason, report })
        };
        loop {
            if report.iterations >= limits.max_iterations {
                return fail(format!("iteration cap {}", limits.max_iterations), report);
            }
            let next = match self.try_sweep(&current, limits, deadline) {
                Ok(n) => n,
                Err(reason) if reason == TIME_LIMIT => {
                    let t = limits.time_limit.unwrap_or(Duration::ZERO);
                    return fail(format!("time limit {t:?}"), report);
                }
                Err(reason) => return fail(reason, report),
            };
            let residual = (0..next.sets().len())
                .into_par_iter()
                .map(|r| set_residual(current.set(r), next.set(r)))
                .collect::<Vec<_>>()
                .into_iter()
                .fold(0.0, f64::max);
            report.record(residual, next.vector_count());
            current = next;
            if residual <= epsilon {
                report.converged = true;
                break;
            }
        }
        report.elapsed_secs = start.elapsed().as_secs_f64();
        Ok((ValueFunction::PerRegion(current), report))
    }
}

/// Solves a region-observable model by restricted value iteration.
pub fn restricted_value_iteration(
    model: &RegionObservablePomdp,
    epsilon: f64,
    limits: &SolveLimits,
) -> Result<(ValueFunction, SolveReport), SolverError> {
    RestrictedSolver::new(model).solve(epsilon, limits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::tests::random_model;
    use crate::pomdp::Belief;
    use crate::region::{radius_k_system, transform, RegionSystem};
    use crate::solver::exact::tests::{expectimax, random_belief};
    use crate::solver::{exact_value_iteration, mdp_value_iteration};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radius_zero_equals_mdp() {
        let m = random_model(14, 5, 3, 3, 0.95);
        let mp = transform(&m, &RegionSystem::singletons(5));
        let (vf, report) = restricted_value_iteration(&mp, 1e-9, &SolveLimits::default()).unwrap();
        let mdp = mdp_value_iteration(&m, 1e-9, &SolveLimits::default());
        assert_eq!(report.iterations, mdp.report.iterations);
        for s in 0..5 {
            let v = vf.value_at(&Belief::point_mass(5, s)).unwrap();
            assert!((v - mdp.values[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn whole_region_equals_expectimax() {
        let m = random_model(15, 3, 2, 2, 0.95);
        let mp = transform(&m, &RegionSystem::whole(3));
        let solver = RestrictedSolver::new(&mp);
        let mut rv = RegionValues::zeros(mp.system().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 1..=3 {
            rv = solver.sweep(&rv);
            let vf = ValueFunction::PerRegion(rv.clone());
            for _ in 0..50 {
                let b = random_belief(&mut rng, 3);
                assert!((vf.value_at(&b).unwrap() - expectimax(&m, &b, t)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oracle_values_bound_exact_values() {
        let m = random_model(16, 3, 2, 2, 0.9);
        let eps = 1e-4;
        let (exact, _) = exact_value_iteration(&m, eps, &SolveLimits::default()).unwrap();
        for k in 0..3 {
            let mp = transform(&m, &radius_k_system(&m, k));
            let (vf, _) = restricted_value_iteration(&mp, eps, &SolveLimits::default()).unwrap();
            for s in 0..3 {
                let b = Belief::point_mass(3, s);
                assert!(vf.value_at(&b).unwrap() >= exact.value_at(&b).unwrap() - 2.0 * eps);
            }
        }
    }

    #[test]
    fn region_vectors_stay_inside_regions() {
        let m = random_model(17, 5, 2, 2, 0.9);
        let sys = radius_k_system(&m, 1);
        let mp = transform(&m, &sys);
        let (vf, _) = restricted_value_iteration(&mp, 1e-3, &SolveLimits::default()).unwrap();
        let ValueFunction::PerRegion(rv) = vf else { unreachable!() };
        for (r, set) in sys.regions().iter().zip(rv.sets()) {
            assert!(set.iter().all(|v| v.values.len() == r.len()));
        }
    }

    #[test]
    fn vector_cap_aborts_with_report() {
        let m = random_model(18, 4, 3, 3, 0.95);
        let mp = transform(&m, &RegionSystem::whole(4));
        let limits = SolveLimits { max_vectors: 2, ..Default::default() };
        match restricted_value_iteration(&mp, 1e-6, &limits) {
            Err(SolverError::ResourceLimit { report, .. }) => assert!(report.iterations < 10_000),
            other => panic!("expected resource limit, got {other:?}"),
        }
    }
}
