//! Small dense linear programs.
//!
//! Pruning and residual computation solve many tiny LPs (a handful of
//! variables, tens of constraints). A condensed simplex tableau that only
//! stores nonbasic columns is far cheaper for that shape than a general
//! sparse solver.
//!
//! Only the form `max c.x  s.t.  A x <= h, x >= 0` with `h >= 0` is supported,
//! so the slack basis is always a feasible start and no phase one is needed.
//! Pivots use the largest reduced cost and a Harris ratio test; after a
//! bounded number of iterations the rule switches to Bland's to rule out
//! cycling on the degenerate starts the witness LP produces.

const PIVOT_EPS: f64 = 1e-12;
const RELATIVE_PIVOT: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Unbounded,
}

/// Solves `max c.x  s.t.  rows[i].x <= rhs[i], x >= 0`. Every `rhs[i]` must be
/// non-negative.
pub fn maximize(c: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> LpOutcome {
    let n = c.len();
    let m = rows.len();
    debug_assert_eq!(rhs.len(), m);
    debug_assert!(rhs.iter().all(|&h| h >= 0.0));

    // Row-major tableau: column 0 is the constant, columns 1..=n the
    // coefficients of the nonbasic variables. basic_i = t[i][0] - sum_j t[i][j] N_j.
    let w = n + 1;
    let mut t = vec![0.0; m * w];
    for i in 0..m {
        t[i * w] = rhs[i];
        t[i * w + 1..i * w + 1 + n].copy_from_slice(&rows[i]);
    }
    // Objective z = z0 + sum_j r_j N_j.
    let mut z0 = 0.0;
    let mut r = c.to_vec();
    // Variable labels: originals 0..n, slacks n..n+m.
    let mut nonbasic: Vec<usize> = (0..n).collect();
    let mut basic: Vec<usize> = (n..n + m).collect();
    let bland_after = 10 * (n + m);

    for iteration in 0.. {
        let bland = iteration >= bland_after;
        let mut enter: Option<usize> = None;
        for j in 0..n {
            if r[j] > PIVOT_EPS {
                enter = match enter {
                    None => Some(j),
                    Some(q) if bland && nonbasic[j] < nonbasic[q] => Some(j),
                    Some(q) if !bland && r[j] > r[q] => Some(j),
                    keep => keep,
                };
            }
        }
        let Some(q) = enter else { break };

        let col_max = (0..m).map(|i| t[i * w + 1 + q].abs()).fold(0.0, f64::max);
        let piv_tol = PIVOT_EPS.max(RELATIVE_PIVOT * col_max);
        // Harris ratio test: bound the step with a small feasibility slack,
        // then take the largest pivot among rows within that bound.
        let mut theta = f64::INFINITY;
        for i in 0..m {
            let a = t[i * w + 1 + q];
            if a > piv_tol {
                theta = theta.min((t[i * w].max(0.0) + FEAS_TOL) / a);
            }
        }
        if theta == f64::INFINITY {
            return LpOutcome::Unbounded;
        }
        let mut leave: Option<usize> = None;
        for i in 0..m {
            let a = t[i * w + 1 + q];
            if a <= piv_tol || t[i * w].max(0.0) / a > theta {
                continue;
            }
            leave = match leave {
                None => Some(i),
                Some(p) if bland => {
                    let (ri, rp) = (t[i * w].max(0.0) / a, t[p * w].max(0.0) / t[p * w + 1 + q]);
                    if ri < rp || (ri == rp && basic[i] < basic[p]) {
                        Some(i)
                    } else {
                        Some(p)
                    }
                }
                Some(p) if a > t[p * w + 1 + q] => Some(i),
                keep => keep,
            };
        }
        let p = leave.expect("theta is attained by some row");

        let apq = t[p * w + 1 + q];
        let inv = 1.0 / apq;
        for j in 0..w {
            if j != 1 + q {
                t[p * w + j] *= inv;
            }
        }
        t[p * w + 1 + q] = inv;
        t[p * w] = t[p * w].max(0.0);
        let (before, rest) = t.split_at_mut(p * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let aiq = row[1 + q];
            if aiq == 0.0 {
                continue;
            }
            for j in 0..w {
                if j != 1 + q {
                    row[j] -= aiq * prow[j];
                }
            }
            row[1 + q] = -aiq * inv;
            row[0] = row[0].max(0.0);
        }
        let rq = r[q];
        z0 += rq * prow[0];
        for j in 0..n {
            if j != q {
                r[j] -= rq * prow[1 + j];
            }
        }
        r[q] = -rq * inv;
        std::mem::swap(&mut basic[p], &mut nonbasic[q]);
    }

    let mut x = vec![0.0; n];
    for (i, &label) in basic.iter().enumerate() {
        if label < n {
            x[label] = t[i * w];
        }
    }
    LpOutcome::Optimal { value: z0, x }
}

/// Largest margin by which `candidate` beats every vector in `others`
/// somewhere on the probability simplex, clamped below at zero:
///
/// ```text
/// max(0, max_b min_k (candidate - others[k]) . b)
/// ```
///
/// Returns the margin and a belief attaining it (`None` when the margin is
/// zero). With no competitors the margin is infinite.
pub fn witness_margin(candidate: &[f64], others: &[&[f64]]) -> (f64, Option<Vec<f64>>) {
    let n = candidate.len();
    if others.is_empty() {
        let mut b = vec![0.0; n];
        if n > 0 {
            b[0] = 1.0;
        }
        return (f64::INFINITY, Some(b));
    }
    // Variables: b_0..b_{n-1}, d. Rows: d - (w - v_k).b <= 0 and sum b <= 1.
    // The LP is homogeneous in (b, d), so relaxing sum b = 1 to <= 1 only
    // clamps negative optima to zero.
    let mut rows = Vec::with_capacity(others.len() + 1);
    for v in others {
        let mut row: Vec<f64> = candidate.iter().zip(v.iter()).map(|(w, v)| v - w).collect();
        row.push(1.0);
        rows.push(row);
    }
    let mut simplex = vec![1.0; n];
    simplex.push(0.0);
    rows.push(simplex);
    let mut rhs = vec![0.0; others.len()];
    rhs.push(1.0);
    let mut c = vec![0.0; n];
    c.push(1.0);

    match maximize(&c, &rows, &rhs) {
        LpOutcome::Optimal { value, x } => {
            if value > 0.0 {
                (value, Some(x[..n].to_vec()))
            } else {
                (0.0, None)
            }
        }
        // d is bounded by any single competitor row together with sum b <= 1
        LpOutcome::Unbounded => unreachable!("witness LP is bounded"),
    }
}
