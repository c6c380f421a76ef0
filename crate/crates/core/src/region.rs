//! Region systems and the region-observable transformation.
//!
//! A region system is an ordered antichain of state subsets that covers the
//! state space. Radius-k systems are built from ideal reachability: the
//! region centered at `s` holds every state reachable from `s` in at most `k`
//! steps through the actions' intended effects.
//!
//! The oracle of the region-observable model reports, after each transition,
//! the region containing the true next state that best supports
//! `s' -> P(s', o | s, a)` (previous state `s`, action `a`, observation `o`).
//! Ties go to the region that comes first in the system's ordering.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::pomdp::{Belief, BeliefError, Pomdp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("region {0} is empty")]
    EmptyRegion(usize),
    #[error("region {region} lists state {state} more than once")]
    DuplicateMember { region: usize, state: usize },
    #[error("region {region} names state {state}, but the model has {num_states} states")]
    StateOutOfRange { region: usize, state: usize, num_states: usize },
    #[error("region {inner} is a subset of region {outer}")]
    NotAntichain { inner: usize, outer: usize },
    #[error("state {0} is not covered by any region")]
    Uncovered(usize),
    #[error("degree of support is undefined for an all-zero function")]
    UndefinedSupport,
}

/// A subset of states, identified by its position in a [`RegionSystem`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    id: usize,
    members: Vec<usize>,
}

impl Region {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Strictly ascending state indices.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, s: usize) -> bool {
        self.members.binary_search(&s).is_ok()
    }

    /// Local index of `s` inside this region.
    pub fn position(&self, s: usize) -> Option<usize> {
        self.members.binary_search(&s).ok()
    }

    fn is_subset_of(&self, other: &Region) -> bool {
        self.members.iter().all(|&s| other.contains(s))
    }
}

/// Ordered antichain of regions covering every state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSystem {
    num_states: usize,
    regions: Vec<Region>,
    radius: Option<usize>,
    containing: Vec<Vec<usize>>,
}

impl RegionSystem {
    /// Validates and indexes a list of regions. Member lists may be given in
    /// any order; list order becomes the tie-breaking order.
    pub fn new(
        num_states: usize,
        regions: Vec<Vec<usize>>,
        radius: Option<usize>,
    ) -> Result<Self, RegionError> {
        let mut built = Vec::with_capacity(regions.len());
        for (id, mut members) in regions.into_iter().enumerate() {
            if members.is_empty() {
                return Err(RegionError::EmptyRegion(id));
            }
            members.sort_unstable();
            for pair in members.windows(2) {
                if pair[0] == pair[1] {
                    return Err(RegionError::DuplicateMember { region: id, state: pair[0] });
                }
            }
            if let Some(&s) = members.iter().find(|&&s| s >= num_states) {
                return Err(RegionError::StateOutOfRange { region: id, state: s, num_states });
            }
            built.push(Region { id, members });
        }
        let mut containing = vec![Vec::new(); num_states];
        for r in &built {
            for &s in &r.members {
                containing[s].push(r.id);
            }
        }
        if let Some(s) = containing.iter().position(|c| c.is_empty()) {
            return Err(RegionError::Uncovered(s));
        }
        for a in &built {
            // only regions sharing a state can contain each other
            for &b in &containing[a.members[0]] {
                if b != a.id && a.is_subset_of(&built[b]) {
                    return Err(RegionError::NotAntichain { inner: a.id, outer: b });
                }
            }
        }
        Ok(RegionSystem { num_states, regions: built, radius, containing })
    }

    /// One singleton region per state.
    pub fn singletons(num_states: usize) -> Self {
        Self::new(num_states, (0..num_states).map(|s| vec![s]).collect(), Some(0)).unwrap()
    }

    /// A single region holding every state.
    pub fn whole(num_states: usize) -> Self {
        Self::new(num_states, vec![(0..num_states).collect()], None).unwrap()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: usize) -> &Region {
        &self.regions[id]
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn radius(&self) -> Option<usize> {
        self.radius
    }

    /// Ids of the regions containing `s`, in system order.
    pub fn containing(&self, s: usize) -> &[usize] {
        &self.containing[s]
    }

    /// Ids of regions that hold every state with positive mass in `mass`.
    pub fn supporting(&self, mass: &[f64]) -> Vec<usize> {
        self.supporting_states(mass.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, _)| s))
    }

    /// Ids of regions that hold every listed state.
    pub fn supporting_states(&self, mut support: impl Iterator<Item = usize>) -> Vec<usize> {
        let Some(first) = support.next() else {
            return Vec::new();
        };
        let rest: Vec<usize> = support.collect();
        self.containing[first]
            .iter()
            .copied()
            .filter(|&r| rest.iter().all(|&s| self.regions[r].contains(s)))
            .collect()
    }
}

/// The intended outcome of `a` in `s`, or `None` when the action has no
/// intended movement there.
pub fn ideal_successor(model: &Pomdp, s: usize, a: usize) -> Option<usize> {
    model.intended_effect(s, a)
}

/// Radius-`k` region centered at `center`: the `k`-step closure under ideal
/// successors, as an ascending list.
pub fn radius_k_region(model: &Pomdp, center: usize, k: usize) -> Vec<usize> {
    let mut seen = BTreeSet::from([center]);
    let mut frontier = vec![center];
    for _ in 0..k {
        let mut next = Vec::new();
        for &s in &frontier {
            for a in 0..model.num_actions() {
                if let Some(t) = ideal_successor(model, s, a) {
                    if seen.insert(t) {
                        next.push(t);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    seen.into_iter().collect()
}

/// Builds the radius-`k` region system.
///
/// One region is built per center state; then, scanning centers in index
/// order, a region is dropped when it is a subset of (or equal to) a region
/// that survives. Equal regions keep the smaller center. Survivors keep
/// center order, which is the tie-breaking order.
pub fn radius_k_system(model: &Pomdp, k: usize) -> RegionSystem {
    let n = model.num_states();
    let centered: Vec<Vec<usize>> = (0..n).map(|s| radius_k_region(model, s, k)).collect();
    let is_subset = |a: &[usize], b: &[usize]| {
        a.len() <= b.len() && a.iter().all(|s| b.binary_search(s).is_ok())
    };
    let mut keep = vec![true; n];
    for i in 0..n {
        if !keep[i] {
            continue;
        }
        for j in 0..n {
            if i == j || !keep[j] {
                continue;
            }
            let (a, b) = (&centered[i], &centered[j]);
            if is_subset(a, b) && (a.len() < b.len() || j < i) {
                keep[i] = false;
                break;
            }
        }
    }
    let regions = centered
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    RegionSystem::new(n, regions, Some(k)).expect("radius-k regions form an antichain cover")
}

/// Degree of support of a non-negative function `f` by `region`:
/// `sum_{s in R} f(s) / sum_s f(s)`.
pub fn support(f: &[f64], region: &Region) -> Result<f64, RegionError> {
    let total: f64 = f.iter().sum();
    if !(total > 0.0) {
        return Err(RegionError::UndefinedSupport);
    }
    let inside: f64 = region.members.iter().map(|&s| f[s]).sum();
    Ok(inside / total)
}

/// Region reported by the oracle when the world moved from `prev` to `next`
/// under `a` and `o` was observed.
pub fn oracle_select(
    model: &Pomdp,
    system: &RegionSystem,
    next: usize,
    o: usize,
    prev: usize,
    a: usize,
) -> usize {
    let mut best = usize::MAX;
    let mut best_mass = f64::NEG_INFINITY;
    for &r in system.containing(next) {
        let mass: f64 = system.regions[r]
            .members
            .iter()
            .map(|&s| model.joint_transition_observation(prev, a, s, o))
            .sum();
        // containing() is in system order, so strict comparison keeps the first
        if mass > best_mass {
            best = r;
            best_mass = mass;
        }
    }
    best
}

/// `P(R | s+, o, s, a)`: one for the region the oracle selects, zero otherwise.
pub fn region_choice_prob(
    model: &Pomdp,
    system: &RegionSystem,
    region: usize,
    next: usize,
    o: usize,
    prev: usize,
    a: usize,
) -> f64 {
    if oracle_select(model, system, next, o, prev, a) == region {
        1.0
    } else {
        0.0
    }
}

/// Composite observation of a region-observable model: the base
/// observation and the reported region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompositeObservation {
    pub observation: usize,
    pub region: usize,
}

/// Scratch space for [`RegionObservablePomdp::branch_into`].
#[derive(Debug, Default, Clone)]
pub struct BranchBuffer {
    index: Vec<u32>,
    keys: Vec<CompositeObservation>,
    entries: Vec<Vec<(usize, f64)>>,
}

impl BranchBuffer {
    /// Branches from the last [`branch_into`](RegionObservablePomdp::branch_into).
    pub fn branches(&self) -> impl Iterator<Item = (CompositeObservation, &[(usize, f64)])> {
        self.keys.iter().zip(&self.entries).map(|(z, e)| (*z, e.as_slice()))
    }
}

/// A POMDP augmented with the region oracle.
#[derive(Debug, Clone)]
pub struct RegionObservablePomdp {
    base: Pomdp,
    system: RegionSystem,
    /// Per `(a, s-)`: for each positive-probability successor `s+`, the
    /// selected region id for every observation (`u32::MAX` where
    /// `P(o | s+, a, s-) = 0`).
    selections: Vec<Vec<(usize, Vec<u32>)>>,
}

const NO_REGION: u32 = u32::MAX;

/// Builds the region-observable counterpart of `model`.
pub fn transform(model: &Pomdp, system: &RegionSystem) -> RegionObservablePomdp {
    assert_eq!(model.num_states(), system.num_states(), "region system does not match model");
    let (ns, no) = (model.num_states(), model.num_observations());
    let selections = (0..model.num_actions() * ns)
        .into_par_iter()
        .map(|cell| {
            let (a, prev) = (cell / ns, cell % ns);
            model
                .successors(prev, a)
                .iter()
                .map(|&(next, _)| {
                    let mut row = vec![NO_REGION; no];
                    for &(o, _) in model.observation_row(next, a, prev) {
                        row[o] = oracle_select(model, system, next, o, prev, a) as u32;
                    }
                    (next, row)
                })
                .collect()
        })
        .collect();
    RegionObservablePomdp { base: model.clone(), system: system.clone(), selections }
}

impl RegionObservablePomdp {
    pub fn base(&self) -> &Pomdp {
        &self.base
    }

    pub fn system(&self) -> &RegionSystem {
        &self.system
    }

    /// The oracle's region for a transition, using the precomputed table
    /// when the transition has positive probability.
    pub fn selected_region(&self, next: usize, o: usize, prev: usize, a: usize) -> usize {
        let ns = self.base.num_states();
        let cell = &self.selections[a * ns + prev];
        if let Some((_, row)) = cell.iter().find(|(s, _)| *s == next) {
            if row[o] != NO_REGION {
                return row[o] as usize;
            }
        }
        oracle_select(&self.base, &self.system, next, o, prev, a)
    }

    /// `P(z | s+, a, s-) = P(o | s+, a, s-) P(R | s+, o, s-, a)`.
    pub fn observation_prob(&self, z: CompositeObservation, next: usize, a: usize, prev: usize) -> f64 {
        let po = self.base.observation(next, a, prev, z.observation);
        if po == 0.0 {
            return 0.0;
        }
        if self.selected_region(next, z.observation, prev, a) == z.region {
            po
        } else {
            0.0
        }
    }

    /// Positive-probability composite observations for `(s+, a, s-)`.
    pub fn composite_observations(
        &self,
        next: usize,
        a: usize,
        prev: usize,
    ) -> impl Iterator<Item = (CompositeObservation, f64)> + '_ {
        self.base.observation_row(next, a, prev).iter().map(move |&(o, p)| {
            let region = self.selected_region(next, o, prev, a);
            (CompositeObservation { observation: o, region }, p)
        })
    }

    /// For each positive-probability successor of `(prev, a)`: the successor,
    /// its probability and the per-observation region table.
    pub(crate) fn transitions_with_selection(
        &self,
        prev: usize,
        a: usize,
    ) -> impl Iterator<Item = (usize, f64, &[u32])> + '_ {
        let ns = self.base.num_states();
        self.base
            .successors(prev, a)
            .iter()
            .zip(&self.selections[a * ns + prev])
            .map(|(&(next, p), (n2, row))| {
                debug_assert_eq!(next, *n2);
                (next, p, row.as_slice())
            })
    }

    /// Unnormalized next-belief mass for each composite observation reachable
    /// from `b` under `a`, sorted by observation.
    pub fn branch(&self, b: &Belief, a: usize) -> Vec<(CompositeObservation, Vec<f64>)> {
        let ns = self.base.num_states();
        let mut out: std::collections::BTreeMap<CompositeObservation, Vec<f64>> = Default::default();
        for (prev, &bp) in b.probs().iter().enumerate() {
            if bp == 0.0 {
                continue;
            }
            for (next, pt, row) in self.transitions_with_selection(prev, a) {
                for &(o, po) in self.base.observation_row(next, a, prev) {
                    let w = bp * pt * po;
                    if w > 0.0 {
                        let z = CompositeObservation { observation: o, region: row[o] as usize };
                        out.entry(z).or_insert_with(|| vec![0.0; ns])[next] += w;
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    /// Like [`branch`](Self::branch), writing each mass as `(state, weight)`
    /// pairs of positive weight into a reusable buffer.
    pub fn branch_into(&self, b: &Belief, a: usize, buf: &mut BranchBuffer) {
        let nr = self.system.len();
        let size = self.base.num_observations() * nr;
        if buf.index.len() != size {
            buf.index = vec![u32::MAX; size];
        }
        buf.keys.clear();
        for (prev, &bp) in b.probs().iter().enumerate() {
            if bp == 0.0 {
                continue;
            }
            for (next, pt, row) in self.transitions_with_selection(prev, a) {
                for &(o, po) in self.base.observation_row(next, a, prev) {
                    let w = bp * pt * po;
                    if w <= 0.0 {
                        continue;
                    }
                    let region = row[o] as usize;
                    let slot = &mut buf.index[o * nr + region];
                    if *slot == u32::MAX {
                        *slot = buf.keys.len() as u32;
                        buf.keys.push(CompositeObservation { observation: o, region });
                        match buf.entries.get_mut(buf.keys.len() - 1) {
                            Some(e) => e.clear(),
                            None => buf.entries.push(Vec::new()),
                        }
                    }
                    let entries = &mut buf.entries[*slot as usize];
                    match entries.iter_mut().find(|(s, _)| *s == next) {
                        Some(e) => e.1 += w,
                        None => entries.push((next, w)),
                    }
                }
            }
        }
        for z in &buf.keys {
            buf.index[z.observation * nr + z.region] = u32::MAX;
        }
    }

    /// Bayes update with a composite observation.
    pub fn belief_update(&self, b: &Belief, a: usize, z: CompositeObservation) -> Result<Belief, BeliefError> {
        let mut mass = vec![0.0; self.base.num_states()];
        for (prev, &bp) in b.probs().iter().enumerate() {
            if bp == 0.0 {
                continue;
            }
            for &(next, pt) in self.base.successors(prev, a) {
                mass[next] += bp * pt * self.observation_prob(z, next, a, prev);
            }
        }
        Belief::normalize(mass)
    }

    /// `P(z | b, a)`
    pub fn observation_marginal(&self, b: &Belief, a: usize, z: CompositeObservation) -> f64 {
        let mut total = 0.0;
        for (prev, &bp) in b.probs().iter().enumerate() {
            if bp == 0.0 {
                continue;
            }
            for &(next, pt) in self.base.successors(prev, a) {
                total += bp * pt * self.observation_prob(z, next, a, prev);
            }
        }
        total
    }
}
