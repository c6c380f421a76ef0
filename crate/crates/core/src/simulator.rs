//! Seeded simulation trials and the oracle gap estimate.
//!
//! A trial starts from a known state, lets a policy act on its belief until
//! it declares the goal or runs out of steps, and pays `gamma^n` when the
//! goal is declared correctly after `n` actions. Trial `i` of a batch uses
//! seed `base_seed + i`; the start state comes from a separate stream of the
//! same seed, so a trial can be replayed alone and paired batches share
//! start states and random numbers.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::pomdp::{Belief, BeliefError, Pomdp, PROB_TOL};
use crate::region::{CompositeObservation, RegionObservablePomdp};
use crate::solver::{greedy_action, Lookahead, SolverError, ValueFunction};

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_MAX_STEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid trial configuration: {0}")]
    Config(String),
    #[error("sampled observation has zero likelihood under the belief")]
    Inconsistent(#[from] BeliefError),
    #[error("policy failed: {0}")]
    Policy(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub num_trials: usize,
    pub max_steps: usize,
    pub base_seed: u64,
    /// Distribution over all states of the model.
    pub start_distribution: Vec<f64>,
    pub discount: f64,
}

impl TrialConfig {
    /// Default batch starting uniformly from `states`.
    pub fn uniform_over(num_states: usize, states: impl IntoIterator<Item = usize>, discount: f64) -> Self {
        let mut start = vec![0.0; num_states];
        let chosen: Vec<usize> = states.into_iter().collect();
        for &s in &chosen {
            start[s] = 1.0 / chosen.len() as f64;
        }
        TrialConfig {
            num_trials: DEFAULT_TRIALS,
            max_steps: DEFAULT_MAX_STEPS,
            base_seed: 0,
            start_distribution: start,
            discount,
        }
    }

    pub fn validate(&self, num_states: usize) -> Result<(), SimError> {
        if self.num_trials == 0 {
            return Err(SimError::Config("num_trials must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(SimError::Config("max_steps must be at least 1".into()));
        }
        if self.start_distribution.len() != num_states {
            return Err(SimError::Config(format!(
                "start distribution has {} entries, model has {num_states} states",
                self.start_distribution.len()
            )));
        }
        let sum: f64 = self.start_distribution.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL || self.start_distribution.iter().any(|&p| !(p >= 0.0)) {
            return Err(SimError::Config(format!("start distribution sums to {sum}")));
        }
        Ok(())
    }
}

/// Which action ends a trial and where declaring it is correct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalSpec {
    pub declare_action: usize,
    pub goal_states: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    DeclaredCorrect,
    DeclaredWrong,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub start_state: usize,
    /// Actions taken before declaring (or `max_steps` on timeout).
    pub steps_taken: usize,
    pub outcome: Outcome,
    pub reward: f64,
}

/// One step of a recorded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub action: usize,
    pub state: usize,
    pub observation: usize,
    /// Region reported by the oracle, if any.
    pub region: Option<usize>,
    pub belief: Belief,
}

/// `g[n]`: trials that declared the goal correctly within `n` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GCurve {
    pub counts: Vec<usize>,
    pub num_trials: usize,
}

impl GCurve {
    pub fn from_results(results: &[TrialResult], max_steps: usize) -> Self {
        let mut counts = vec![0; max_steps + 1];
        for r in results.iter().filter(|r| r.outcome == Outcome::DeclaredCorrect) {
            counts[r.steps_taken] += 1;
        }
        for n in 1..counts.len() {
            counts[n] += counts[n - 1];
        }
        GCurve { counts, num_trials: results.len() }
    }

    pub fn max_steps(&self) -> usize {
        self.counts.len() - 1
    }

    /// `g(n) / num_trials`
    pub fn fraction(&self, n: usize) -> f64 {
        self.counts[n] as f64 / self.num_trials as f64
    }
}

/// Where observations come from during a trial.
#[derive(Debug, Clone, Copy)]
pub enum Environment<'a> {
    Plain(&'a Pomdp),
    Oracle(&'a RegionObservablePomdp),
}

impl Environment<'_> {
    pub fn base(&self) -> &Pomdp {
        match self {
            Environment::Plain(m) => m,
            Environment::Oracle(mp) => mp.base(),
        }
    }
}

/// Maps beliefs to actions.
pub trait Policy: Sync {
    fn act(&self, belief: &Belief) -> Result<usize, SolverError>;
}

impl<F> Policy for F
where
    F: Fn(&Belief) -> Result<usize, SolverError> + Sync,
{
    fn act(&self, belief: &Belief) -> Result<usize, SolverError> {
        self(belief)
    }
}

/// One-step lookahead with a value function.
pub struct GreedyPolicy<'a> {
    pub view: Lookahead<'a>,
    pub values: &'a ValueFunction,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&self, belief: &Belief) -> Result<usize, SolverError> {
        greedy_action(self.view, self.values, belief)
    }
}

fn sample(rng: &mut ChaCha8Rng, row: &[(usize, f64)]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(i, p) in row {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.last().expect("rows of a valid model are non-empty").0
}

fn start_state(dist: &[f64], seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    WeightedIndex::new(dist).expect("validated start distribution").sample(&mut rng)
}

fn simulate(
    env: Environment<'_>,
    policy: &dyn Policy,
    goal: &GoalSpec,
    s0: usize,
    seed: u64,
    max_steps: usize,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<TrialResult, SimError> {
    let base = env.base();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut belief = Belief::point_mass(base.num_states(), s0);
    let mut state = s0;
    let finish = |steps, outcome, reward| TrialResult { seed, start_state: s0, steps_taken: steps, outcome, reward };
    for n in 0..=max_steps {
        let a = policy.act(&belief)?;
        if a == goal.declare_action {
            return Ok(if goal.goal_states.contains(&state) {
                finish(n, Outcome::DeclaredCorrect, base.discount().powi(n as i32))
            } else {
                finish(n, Outcome::DeclaredWrong, 0.0)
            });
        }
        if n == max_steps {
            break;
        }
        let prev = state;
        state = sample(&mut rng, base.successors(prev, a));
        let o = sample(&mut rng, base.observation_row(state, a, prev));
        let region = match env {
            Environment::Plain(m) => {
                belief = m.belief_update(&belief, a, o)?;
                None
            }
            Environment::Oracle(mp) => {
                let z = CompositeObservation { observation: o, region: mp.selected_region(state, o, prev, a) };
                belief = mp.belief_update(&belief, a, z)?;
                Some(z.region)
            }
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceStep { action: a, state, observation: o, region, belief: belief.clone() });
        }
    }
    Ok(finish(max_steps, Outcome::Timeout, 0.0))
}

/// Runs one trial from `s0` with the given seed.
pub fn run_trial(
    env: Environment<'_>,
    policy: &dyn Policy,
    goal: &GoalSpec,
    s0: usize,
    seed: u64,
    max_steps: usize,
) -> Result<TrialResult, SimError> {
    simulate(env, policy, goal, s0, seed, max_steps, None)
}

/// Like [`run_trial`], also returning every step taken.
pub fn run_trial_traced(
    env: Environment<'_>,
    policy: &dyn Policy,
    goal: &GoalSpec,
    s0: usize,
    seed: u64,
    max_steps: usize,
) -> Result<(TrialResult, Vec<TraceStep>), SimError> {
    let mut trace = Vec::new();
    let r = simulate(env, policy, goal, s0, seed, max_steps, Some(&mut trace))?;
    Ok((r, trace))
}

/// Runs `cfg.num_trials` trials in parallel; results are in trial order.
pub fn run_batch(
    env: Environment<'_>,
    policy: &dyn Policy,
    goal: &GoalSpec,
    cfg: &TrialConfig,
) -> Result<(Vec<TrialResult>, GCurve), SimError> {
    cfg.validate(env.base().num_states())?;
    let results = (0..cfg.num_trials)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed.wrapping_add(i as u64);
            let s0 = start_state(&cfg.start_distribution, seed);
            run_trial(env, policy, goal, s0, seed, cfg.max_steps)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let curve = GCurve::from_results(&results, cfg.max_steps);
    Ok((results, curve))
}

/// `sum_n gamma^n (g(n) - g(n-1)) / num_trials`, with the sum correctly
/// rounded so it equals [`mean_reward`] on the same batch bit for bit.
pub fn average_reward(curve: &GCurve, discount: f64) -> f64 {
    let mut total = ExactSum::default();
    let mut prev = 0;
    for (n, &g) in curve.counts.iter().enumerate() {
        let (x, k) = (discount.powi(n as i32), (g - prev) as f64);
        let p = x * k;
        total.add(p);
        total.add(x.mul_add(k, -p));
        prev = g;
    }
    total.value() / curve.num_trials as f64
}

/// Mean of the per-trial rewards (sum correctly rounded).
pub fn mean_reward(results: &[TrialResult]) -> f64 {
    let mut total = ExactSum::default();
    results.iter().for_each(|r| total.add(r.reward));
    total.value() / results.len() as f64
}

/// Shewchuk's nonoverlapping partials; `value` is the correctly rounded sum.
#[derive(Default)]
struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    fn add(&mut self, mut x: f64) {
        let mut kept = 0;
        for i in 0..self.partials.len() {
            let mut y = self.partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut i) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[i];
        let mut lo = 0.0;
        while i > 0 {
            i -= 1;
            let x = hi;
            let y = p[i];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // half-way case: round using the sign of the next partial
        if i > 0 && ((lo < 0.0 && p[i - 1] < 0.0) || (lo > 0.0 && p[i - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEstimate {
    pub oracle_reward: f64,
    pub plain_reward: f64,
    pub gap: f64,
    pub oracle_curve: GCurve,
    pub plain_curve: GCurve,
}

/// Paired batches with and without the oracle, driven by the same value
/// function.
pub fn gap_estimate(
    model_mprime: &RegionObservablePomdp,
    values: &ValueFunction,
    goal: &GoalSpec,
    cfg: &TrialConfig,
) -> Result<GapEstimate, SimError> {
    let oracle_policy = GreedyPolicy { view: Lookahead::Oracle(model_mprime), values };
    let plain_policy = GreedyPolicy { view: Lookahead::Approximate(model_mprime), values };
    let (_, oracle_curve) = run_batch(Environment::Oracle(model_mprime), &oracle_policy, goal, cfg)?;
    let (_, plain_curve) = run_batch(Environment::Plain(model_mprime.base()), &plain_policy, goal, cfg)?;
    let oracle_reward = average_reward(&oracle_curve, cfg.discount);
    let plain_reward = average_reward(&plain_curve, cfg.discount);
    Ok(GapEstimate { oracle_reward, plain_reward, gap: oracle_reward - plain_reward, oracle_curve, plain_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{parse_map, ActionOutcomeModel, GridWorld, SensorModel, DECLARE_GOAL, TURN_LEFT};
    use crate::region::{radius_k_system, support, transform, RegionSystem};
    use crate::solver::{restricted_value_iteration, RegionValues, RestrictedSolver, SolveLimits};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn corridor() -> GridWorld {
        let map = parse_map("goal: 3 1 E\n######\n#....#\n######\n").unwrap();
        GridWorld::new(map, &ActionOutcomeModel::standard(), &SensorModel::standard(), 0.99).unwrap()
    }

    fn goal(w: &GridWorld) -> GoalSpec {
        GoalSpec { declare_action: DECLARE_GOAL, goal_states: vec![w.goal_state] }
    }

    fn constant(a: usize) -> impl Fn(&Belief) -> Result<usize, SolverError> + Sync {
        move |_| Ok(a)
    }

    #[test]
    fn declaring_at_the_goal_pays_one() {
        let w = corridor();
        let r = run_trial(Environment::Plain(&w.model), &constant(DECLARE_GOAL), &goal(&w), w.goal_state, 7, 100).unwrap();
        assert_eq!((r.outcome, r.steps_taken, r.reward), (Outcome::DeclaredCorrect, 0, 1.0));
    }

    #[test]
    fn declaring_elsewhere_pays_nothing() {
        let w = corridor();
        let r = run_trial(Environment::Plain(&w.model), &constant(DECLARE_GOAL), &goal(&w), 0, 7, 100).unwrap();
        assert_eq!((r.outcome, r.reward), (Outcome::DeclaredWrong, 0.0));
    }

    #[test]
    fn never_declaring_times_out() {
        let w = corridor();
        let r = run_trial(Environment::Plain(&w.model), &constant(TURN_LEFT), &goal(&w), 0, 7, 100).unwrap();
        assert_eq!((r.outcome, r.steps_taken, r.reward), (Outcome::Timeout, 100, 0.0));
    }

    #[test]
    fn average_reward_examples() {
        let mut counts = vec![0; 101];
        counts[1..].iter_mut().for_each(|c| *c = 500);
        assert!((average_reward(&GCurve { counts, num_trials: 1000 }, 0.99) - 0.495).abs() < 1e-15);
        assert_eq!(average_reward(&GCurve { counts: vec![1000; 101], num_trials: 1000 }, 0.99), 1.0);
        assert_eq!(average_reward(&GCurve { counts: vec![0; 101], num_trials: 1000 }, 0.99), 0.0);
    }

    #[test]
    fn exact_sum_is_correctly_rounded() {
        let mut s = ExactSum::default();
        for x in [1e100, 1.0, -1e100, 1e-16, 1e-16] {
            s.add(x);
        }
        assert_eq!(s.value(), 1.0000000000000002);
        let mut s = ExactSum::default();
        (0..10).for_each(|_| s.add(0.1));
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn invalid_config() {
        let w = corridor();
        let mut cfg = TrialConfig::uniform_over(w.model.num_states(), w.navigation_states(), 0.99);
        cfg.num_trials = 0;
        assert!(run_batch(Environment::Plain(&w.model), &constant(0), &goal(&w), &cfg).is_err());
    }

    struct Solved {
        world: GridWorld,
        models: Vec<RegionObservablePomdp>,
        values: Vec<ValueFunction>,
    }

    fn solved() -> &'static Solved {
        static CELL: OnceLock<Solved> = OnceLock::new();
        CELL.get_or_init(|| {
            let world = corridor();
            let models: Vec<_> = (0..2).map(|k| transform(&world.model, &radius_k_system(&world.model, k))).collect();
            let limits = SolveLimits { prune_tolerance: 1e-6, ..Default::default() };
            let values = models
                .iter()
                .map(|mp| restricted_value_iteration(mp, 1e-3, &limits).unwrap().0)
                .collect();
            Solved { world, models, values }
        })
    }

    #[test]
    fn whole_region_oracle_matches_plain() {
        let w = corridor();
        let mp = transform(&w.model, &RegionSystem::whole(w.model.num_states()));
        let solver = RestrictedSolver::new(&mp);
        let mut rv = RegionValues::zeros(mp.system().clone());
        for _ in 0..2 {
            rv = solver.sweep(&rv);
        }
        let values = ValueFunction::PerRegion(rv);
        let mut cfg = TrialConfig::uniform_over(w.model.num_states(), w.navigation_states(), 0.99);
        cfg.num_trials = 50;
        cfg.max_steps = 20;
        let g = gap_estimate(&mp, &values, &goal(&w), &cfg).unwrap();
        assert_eq!(g.oracle_curve, g.plain_curve);
        assert_eq!(g.gap, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn formulas_agree_and_batches_repeat(seed in any::<u64>(), k in 0usize..2) {
            let sv = solved();
            let w = &sv.world;
            let policy = GreedyPolicy { view: Lookahead::Approximate(&sv.models[k]), values: &sv.values[k] };
            let mut cfg = TrialConfig::uniform_over(w.model.num_states(), w.navigation_states(), 0.99);
            cfg.num_trials = 10;
            cfg.max_steps = 40;
            cfg.base_seed = seed;
            let (results, curve) = run_batch(Environment::Plain(&w.model), &policy, &goal(w), &cfg).unwrap();
            prop_assert_eq!(average_reward(&curve, 0.99), mean_reward(&results));
            let (again, _) = run_batch(Environment::Plain(&w.model), &policy, &goal(w), &cfg).unwrap();
            prop_assert_eq!(&results, &again);
        }

        #[test]
        fn oracle_beliefs_stay_inside_reported_regions(seed in any::<u64>(), k in 0usize..2) {
            let sv = solved();
            let w = &sv.world;
            let mp = &sv.models[k];
            let policy = GreedyPolicy { view: Lookahead::Oracle(mp), values: &sv.values[k] };
            let s0 = (seed % w.terminal_state as u64) as usize;
            let (_, trace) = run_trial_traced(Environment::Oracle(mp), &policy, &goal(w), s0, seed, 30).unwrap();
            for step in trace {
                let r = mp.system().region(step.region.unwrap());
                prop_assert!((support(step.belief.probs(), r).unwrap() - 1.0).abs() < 1e-9);
            }
        }
    }
}
