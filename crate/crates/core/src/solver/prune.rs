//! Dominance pruning, cross sums and exact Bellman residuals.

use std::collections::HashSet;
use std::time::Instant;

use crate::lp::witness_margin;

use super::{AlphaVector, SolverError, ValueFunction};

/// A vector survives pruning only if it beats every other vector by more
/// than this somewhere on the simplex.
pub const PRUNE_TOL: f64 = 1e-9;

/// Removes vectors that never strictly attain the maximum.
///
/// Exact duplicates keep their earliest copy. Vectors that win a simplex
/// vertex are kept outright; every other candidate is checked against the
/// confirmed set, first for pointwise dominance and then by a witness LP.
/// A witness belief confirms the best remaining candidate there, so LPs only
/// ever involve confirmed vectors. Survivors keep input order.
pub fn prune(vectors: Vec<AlphaVector>) -> Vec<AlphaVector> {
    prune_with(vectors, PRUNE_TOL)
}

/// [`prune`] with a caller-chosen margin.
pub fn prune_with(vectors: Vec<AlphaVector>, tol: f64) -> Vec<AlphaVector> {
    prune_until(vectors, tol, None).expect("no deadline")
}

/// [`prune_with`] that gives up with `None` once `deadline` passes.
pub fn prune_until(vectors: Vec<AlphaVector>, tol: f64, deadline: Option<Instant>) -> Option<Vec<AlphaVector>> {
    if vectors.len() <= 1 {
        return Some(vectors);
    }
    let n = vectors[0].values.len();
    let mut seen = HashSet::with_capacity(vectors.len());
    let mut remaining: Vec<usize> = (0..vectors.len())
        .filter(|&i| seen.insert(vectors[i].values.iter().map(|x| x.to_bits()).collect::<Vec<_>>()))
        .collect();
    let mut confirmed = vec![false; vectors.len()];

    for s in 0..n {
        let mut best: Option<usize> = None;
        let mut second = f64::NEG_INFINITY;
        for &i in &remaining {
            let x = vectors[i].values[s];
            match best {
                Some(b) if x <= vectors[b].values[s] => second = second.max(x),
                Some(b) => {
                    second = second.max(vectors[b].values[s]);
                    best = Some(i);
                }
                None => best = Some(i),
            }
        }
        if let Some(b) = best {
            if vectors[b].values[s] - second > tol {
                confirmed[b] = true;
            }
        }
    }
    let mut kept: Vec<usize> = remaining.iter().copied().filter(|&i| confirmed[i]).collect();
    remaining.retain(|&i| !confirmed[i]);
    remaining.reverse();

    while let Some(w) = remaining.pop() {
        if deadline.is_some_and(|d| Instant::now() > d) {
            return None;
        }
        let values = &vectors[w].values;
        if kept.iter().any(|&k| vectors[k].values.iter().zip(values).all(|(a, b)| a >= b)) {
            continue;
        }
        let others: Vec<&[f64]> = kept.iter().map(|&k| vectors[k].values.as_slice()).collect();
        let (margin, witness) = witness_margin(values, &others);
        if margin <= tol {
            continue;
        }
        let b = witness.expect("positive margin has a witness");
        let score = |i: usize| vectors[i].values.iter().zip(&b).map(|(v, p)| v * p).sum::<f64>();
        let mut best = (w, score(w));
        let mut best_pos = None;
        for (pos, &i) in remaining.iter().enumerate() {
            let x = score(i);
            let lexically_larger = || {
                vectors[i].values.iter().zip(&vectors[best.0].values).find(|(a, b)| a != b).is_some_and(|(a, b)| a > b)
            };
            if x > best.1 || (x == best.1 && lexically_larger()) {
                best = (i, x);
                best_pos = Some(pos);
            }
        }
        if let Some(pos) = best_pos {
            remaining.remove(pos);
            remaining.push(w);
        }
        kept.push(best.0);
    }

    kept.sort_unstable();
    let mut keep = vec![false; vectors.len()];
    kept.iter().for_each(|&i| keep[i] = true);
    Some(vectors.into_iter().zip(keep).filter_map(|(v, k)| k.then_some(v)).collect())
}

/// All pairwise sums; each result carries the action tag of its left operand.
pub fn cross_sum(left: &[AlphaVector], right: &[AlphaVector]) -> Vec<AlphaVector> {
    let mut out = Vec::with_capacity(left.len() * right.len());
    for a in left {
        for b in right {
            let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
            out.push(AlphaVector { values, action: a.action });
        }
    }
    out
}

/// `max_b |max_{v in new} v.b - max_{w in old} w.b|` over the simplex of the
/// shared support, computed exactly with witness LPs.
pub fn set_residual(old: &[AlphaVector], new: &[AlphaVector]) -> f64 {
    let one_way = |from: &[AlphaVector], against: &[AlphaVector]| {
        let refs: Vec<&[f64]> = against.iter().map(|v| v.values.as_slice()).collect();
        from.iter()
            .map(|v| {
                if against.iter().any(|w| w.values == v.values) {
                    0.0
                } else {
                    witness_margin(&v.values, &refs).0
                }
            })
            .fold(0.0, f64::max)
    };
    one_way(new, old).max(one_way(old, new))
}

/// Bellman residual between two value functions of the same shape.
pub fn bellman_residual(old: &ValueFunction, new: &ValueFunction) -> Result<f64, SolverError> {
    match (old, new) {
        (ValueFunction::Global(a), ValueFunction::Global(b)) => Ok(set_residual(a, b)),
        (ValueFunction::PerRegion(a), ValueFunction::PerRegion(b)) => {
            if a.system() != b.system() {
                return Err(SolverError::WrongRepresentation);
            }
            Ok(a.sets()
                .iter()
                .zip(b.sets())
                .map(|(x, y)| set_residual(x, y))
                .fold(0.0, f64::max))
        }
        _ => Err(SolverError::WrongRepresentation),
    }
}
