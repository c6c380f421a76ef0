//! Finite POMDP models and belief-state arithmetic.
//!
//! A [`Pomdp`] stores dense transition, observation and reward tables. The
//! observation table may depend on the previous state (`P(o | s+, a, s-)`),
//! which is the form a region-observable model needs; ordinary models
//! collapse it to `P(o | s+, a)`. Sparse row views of the nonzero entries are
//! built once at construction and used by every inner loop.
//!
//! Belief updates follow Bayes' rule:
//!
//! ```text
//! b+(s+) = k * sum_s P(s+ | s, a) P(o+ | s+, a, s) b(s)
//! ```
//!
//! with `k` the normalization constant.

use std::fmt;

use thiserror::Error;

/// Row-sum tolerance for every probability table.
pub const PROB_TOL: f64 = 1e-9;

/// Normalizers at or below this are treated as zero.
pub const UNDERFLOW_GUARD: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model failed validation:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("table `{table}` has {got} entries, expected {expected}")]
    Shape {
        table: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("model must have at least one state, action and observation")]
    Empty,
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One broken model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionRowSum { state: usize, action: usize, sum: f64 },
    ObservationRowSum {
        next_state: usize,
        action: usize,
        prev_state: Option<usize>,
        sum: f64,
    },
    TransitionEntry { action: usize, state: usize, next_state: usize, value: f64 },
    ObservationEntry {
        action: usize,
        prev_state: Option<usize>,
        next_state: usize,
        observation: usize,
        value: f64,
    },
    InitialEntry { state: usize, value: f64 },
    InitialSum { sum: f64 },
    Discount { value: f64 },
    Reward { state: usize, action: usize, value: f64 },
    IntendedEffect { state: usize, action: usize, target: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRowSum { state, action, sum } => write!(
                f,
                "transition row (s={state}, a={action}) sums to {sum}, expected 1"
            ),
            Violation::ObservationRowSum { next_state, action, prev_state, sum } => match prev_state {
                Some(p) => write!(
                    f,
                    "observation row (s+={next_state}, a={action}, s-={p}) sums to {sum}, expected 1"
                ),
                None => write!(
                    f,
                    "observation row (s+={next_state}, a={action}) sums to {sum}, expected 1"
                ),
            },
            Violation::TransitionEntry { action, state, next_state, value } => write!(
                f,
                "transition entry (a={action}, s={state}, s+={next_state}) = {value} is not a probability"
            ),
            Violation::ObservationEntry { action, prev_state, next_state, observation, value } => {
                match prev_state {
                    Some(p) => write!(
                        f,
                        "observation entry (a={action}, s-={p}, s+={next_state}, o={observation}) = {value} is not a probability"
                    ),
                    None => write!(
                        f,
                        "observation entry (a={action}, s+={next_state}, o={observation}) = {value} is not a probability"
                    ),
                }
            }
            Violation::InitialEntry { state, value } => {
                write!(f, "initial belief entry s={state} = {value} is not a probability")
            }
            Violation::InitialSum { sum } => {
                write!(f, "initial belief sums to {sum}, expected 1")
            }
            Violation::Discount { value } => write!(f, "discount {value} is outside (0, 1)"),
            Violation::Reward { state, action, value } => {
                write!(f, "reward (s={state}, a={action}) = {value} is not finite")
            }
            Violation::IntendedEffect { state, action, target } => write!(
                f,
                "intended effect (s={state}, a={action}) -> {target} is out of range"
            ),
        }
    }
}

/// Observation probabilities, with or without dependence on the previous state.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationTable {
    /// `P(o | s+, a)`, laid out `[a][s+][o]`.
    Independent(Vec<f64>),
    /// `P(o | s+, a, s-)`, laid out `[a][s-][s+][o]`.
    PreviousState(Vec<f64>),
}

/// A finite POMDP.
#[derive(Debug, Clone)]
pub struct Pomdp {
    state_names: Vec<String>,
    action_names: Vec<String>,
    observation_names: Vec<String>,
    /// `[a][s][s+]`
    transition: Vec<f64>,
    observation: ObservationTable,
    /// `[a][s]`
    reward: Vec<f64>,
    discount: f64,
    initial: Vec<f64>,
    /// `[a][s]`
    intended: Vec<Option<usize>>,
    successors: Vec<Vec<(usize, f64)>>,
    obs_rows: Vec<Vec<(usize, f64)>>,
}

/// Raw tables used to assemble a [`Pomdp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PomdpTables {
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    pub observation_names: Vec<String>,
    pub transition: Vec<f64>,
    pub observation: ObservationTable,
    pub reward: Vec<f64>,
    pub discount: f64,
    pub initial: Vec<f64>,
    pub intended: Vec<Option<usize>>,
}

impl PomdpTables {
    /// Zero-filled tables for the given names, with a uniform initial belief.
    pub fn zeros(
        state_names: Vec<String>,
        action_names: Vec<String>,
        observation_names: Vec<String>,
        discount: f64,
    ) -> Self {
        let (ns, na, no) = (state_names.len(), action_names.len(), observation_names.len());
        PomdpTables {
            transition: vec![0.0; na * ns * ns],
            observation: ObservationTable::Independent(vec![0.0; na * ns * no]),
            reward: vec![0.0; na * ns],
            discount,
            initial: vec![1.0 / ns.max(1) as f64; ns],
            intended: vec![None; na * ns],
            state_names,
            action_names,
            observation_names,
        }
    }

    pub fn set_transition(&mut self, a: usize, s: usize, next: usize, p: f64) {
        let ns = self.state_names.len();
        self.transition[(a * ns + s) * ns + next] = p;
    }

    pub fn set_observation(&mut self, a: usize, next: usize, o: usize, p: f64) {
        let (ns, no) = (self.state_names.len(), self.observation_names.len());
        match &mut self.observation {
            ObservationTable::Independent(t) => t[(a * ns + next) * no + o] = p,
            ObservationTable::PreviousState(t) => {
                for prev in 0..ns {
                    t[((a * ns + prev) * ns + next) * no + o] = p;
                }
            }
        }
    }

    pub fn set_reward(&mut self, a: usize, s: usize, r: f64) {
        let ns = self.state_names.len();
        self.reward[a * ns + s] = r;
    }

    pub fn set_intended(&mut self, a: usize, s: usize, next: Option<usize>) {
        let ns = self.state_names.len();
        self.intended[a * ns + s] = next;
    }
}

impl Pomdp {
    /// Assemble and validate.
    pub fn new(tables: PomdpTables) -> Result<Self, ModelError> {
        let model = Self::from_tables_unchecked(tables)?;
        model.validate().map_err(ModelError::Invalid)?;
        Ok(model)
    }

    /// Assemble without checking the probability invariants. Only the table
    /// shapes are checked; call [`Pomdp::validate`] to audit the contents.
    pub fn from_tables_unchecked(t: PomdpTables) -> Result<Self, ModelError> {
        let (ns, na, no) = (t.state_names.len(), t.action_names.len(), t.observation_names.len());
        if ns == 0 || na == 0 || no == 0 {
            return Err(ModelError::Empty);
        }
        let shape = |table, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(ModelError::Shape { table, expected, got })
            }
        };
        shape("transition", na * ns * ns, t.transition.len())?;
        match &t.observation {
            ObservationTable::Independent(v) => shape("observation", na * ns * no, v.len())?,
            ObservationTable::PreviousState(v) => shape("observation", na * ns * ns * no, v.len())?,
        }
        shape("reward", na * ns, t.reward.len())?;
        shape("initial", ns, t.initial.len())?;
        shape("intended", na * ns, t.intended.len())?;

        let successors = (0..na * ns)
            .map(|row| {
                t.transition[row * ns..(row + 1) * ns]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        let obs = match &t.observation {
            ObservationTable::Independent(v) | ObservationTable::PreviousState(v) => v,
        };
        let obs_rows = obs
            .chunks(no)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();

        Ok(Pomdp {
            state_names: t.state_names,
            action_names: t.action_names,
            observation_names: t.observation_names,
            transition: t.transition,
            observation: t.observation,
            reward: t.reward,
            discount: t.discount,
            initial: t.initial,
            intended: t.intended,
            successors,
            obs_rows,
        })
    }

    /// Copy of the raw tables.
    pub fn to_tables(&self) -> PomdpTables {
        PomdpTables {
            state_names: self.state_names.clone(),
            action_names: self.action_names.clone(),
            observation_names: self.observation_names.clone(),
            transition: self.transition.clone(),
            observation: self.observation.clone(),
            reward: self.reward.clone(),
            discount: self.discount,
            initial: self.initial.clone(),
            intended: self.intended.clone(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observation_names.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn observation_names(&self) -> &[String] {
        &self.observation_names
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.action_names.iter().position(|n| n == name)
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_belief(&self) -> &[f64] {
        &self.initial
    }

    pub fn observation_table(&self) -> &ObservationTable {
        &self.observation
    }

    /// True when observations depend on the previous state.
    pub fn observation_uses_previous(&self) -> bool {
        matches!(self.observation, ObservationTable::PreviousState(_))
    }

    /// `P(s+ | s, a)`
    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        let ns = self.num_states();
        self.transition[(a * ns + s) * ns + next]
    }

    /// `P(o | s+, a, s-)`; `prev` is ignored for models without previous-state dependence.
    pub fn observation(&self, next: usize, a: usize, prev: usize, o: usize) -> f64 {
        let (ns, no) = (self.num_states(), self.num_observations());
        match &self.observation {
            ObservationTable::Independent(t) => t[(a * ns + next) * no + o],
            ObservationTable::PreviousState(t) => t[((a * ns + prev) * ns + next) * no + o],
        }
    }

    /// `r(s, a)`
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[a * self.num_states() + s]
    }

    /// The declared intended outcome of `a` in `s`, if any.
    pub fn intended_effect(&self, s: usize, a: usize) -> Option<usize> {
        self.intended[a * self.num_states() + s]
    }

    /// Nonzero entries of `P(. | s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[a * self.num_states() + s]
    }

    /// Nonzero entries of `P(. | s+, a, s-)`.
    pub fn observation_row(&self, next: usize, a: usize, prev: usize) -> &[(usize, f64)] {
        let ns = self.num_states();
        match &self.observation {
            ObservationTable::Independent(_) => &self.obs_rows[a * ns + next],
            ObservationTable::PreviousState(_) => &self.obs_rows[(a * ns + prev) * ns + next],
        }
    }

    /// `P(s+, o+ | s, a) = P(s+ | s, a) P(o+ | s+, a, s)`
    pub fn joint_transition_observation(&self, s: usize, a: usize, next: usize, o: usize) -> f64 {
        self.transition(s, a, next) * self.observation(next, a, s, o)
    }

    /// Checks every model invariant, collecting all violations.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let (ns, na, no) = (self.num_states(), self.num_actions(), self.num_observations());
        let mut out = Vec::new();
        let bad_prob = |p: f64| !(0.0..=1.0).contains(&p) || p.is_nan();

        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(Violation::Discount { value: self.discount });
        }
        for a in 0..na {
            for s in 0..ns {
                let mut sum = 0.0;
                for next in 0..ns {
                    let p = self.transition(s, a, next);
                    if bad_prob(p) {
                        out.push(Violation::TransitionEntry { action: a, state: s, next_state: next, value: p });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_TOL || sum.is_nan() {
                    out.push(Violation::TransitionRowSum { state: s, action: a, sum });
                }
                let r = self.reward(s, a);
                if !r.is_finite() {
                    out.push(Violation::Reward { state: s, action: a, value: r });
                }
                if let Some(t) = self.intended_effect(s, a) {
                    if t >= ns {
                        out.push(Violation::IntendedEffect { state: s, action: a, target: t });
                    }
                }
            }
        }
        let prevs: Vec<Option<usize>> = if self.observation_uses_previous() {
            (0..ns).map(Some).collect()
        } else {
            vec![None]
        };
        for a in 0..na {
            for &prev in &prevs {
                for next in 0..ns {
                    let mut sum = 0.0;
                    for o in 0..no {
                        let p = self.observation(next, a, prev.unwrap_or(0), o);
                        if bad_prob(p) {
                            out.push(Violation::ObservationEntry {
                                action: a,
                                prev_state: prev,
                                next_state: next,
                                observation: o,
                                value: p,
                            });
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > PROB_TOL || sum.is_nan() {
                        out.push(Violation::ObservationRowSum { next_state: next, action: a, prev_state: prev, sum });
                    }
                }
            }
        }
        let mut sum = 0.0;
        for (s, &p) in self.initial.iter().enumerate() {
            if bad_prob(p) {
                out.push(Violation::InitialEntry { state: s, value: p });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_TOL || sum.is_nan() {
            out.push(Violation::InitialSum { sum });
        }

        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Unnormalized next belief for action `a` and observation `o`.
    fn propagate(&self, b: &Belief, a: usize, o: usize) -> Vec<f64> {
        let mut next = vec![0.0; self.num_states()];
        for (s, &bs) in b.probs().iter().enumerate() {
            if bs == 0.0 {
                continue;
            }
            for &(sp, p) in self.successors(s, a) {
                let po = self.observation(sp, a, s, o);
                next[sp] += p * po * bs;
            }
        }
        next
    }

    /// Bayes update of `b` after taking `a` and observing `o`.
    pub fn belief_update(&self, b: &Belief, a: usize, o: usize) -> Result<Belief, BeliefError> {
        Belief::normalize(self.propagate(b, a, o))
    }

    /// `P(o+ | b, a)`
    pub fn observation_marginal(&self, b: &Belief, a: usize, o: usize) -> f64 {
        self.propagate(b, a, o).iter().sum()
    }

    /// Expected immediate reward `sum_s r(s, a) b(s)`.
    pub fn belief_reward(&self, b: &Belief, a: usize) -> f64 {
        b.probs().iter().enumerate().map(|(s, &p)| self.reward(s, a) * p).sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("observation has zero likelihood under the current belief")]
    ImpossibleObservation,
    #[error("belief has {0} entries but the model has {1} states")]
    Dimension(usize, usize),
    #[error("belief entries must be probabilities summing to 1 (sum = {0})")]
    NotDistribution(f64),
}

/// A probability distribution over states.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Validates that `probs` is a distribution within [`PROB_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self, BeliefError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p) || p.is_nan()) || (sum - 1.0).abs() > PROB_TOL {
            return Err(BeliefError::NotDistribution(sum));
        }
        Ok(Belief(probs))
    }

    /// Scales a non-negative mass vector to sum to one.
    pub fn normalize(mass: Vec<f64>) -> Result<Self, BeliefError> {
        let total: f64 = mass.iter().sum();
        if !(total > UNDERFLOW_GUARD) {
            return Err(BeliefError::ImpossibleObservation);
        }
        Ok(Belief(mass.into_iter().map(|m| m / total).collect()))
    }

    pub fn point_mass(num_states: usize, s: usize) -> Self {
        let mut v = vec![0.0; num_states];
        v[s] = 1.0;
        Belief(v)
    }

    pub fn uniform(num_states: usize) -> Self {
        Belief(vec![1.0 / num_states as f64; num_states])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// States with positive probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, _)| s)
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}
