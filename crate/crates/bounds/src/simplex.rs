//! A small dense two-phase simplex solver for equality-constrained linear
//! programs over nonnegative variables.
//!
//! The canonical-polytope programs this crate solves have at most a few
//! dozen columns, so a textbook tableau with Bland's pivoting rule is both
//! fast enough and deterministic. Redundant constraint rows are tolerated:
//! phase one leaves their artificial variables basic at level zero and the
//! rows stay inert afterwards.

use crate::BoundsError;

/// Residual tolerance for feasibility, pivoting, and reduced-cost tests.
pub const LP_TOL: f64 = 1e-9;

/// Safety valve against numerical stalls; Bland's rule excludes true cycles.
const MAX_PIVOTS: usize = 50_000;

/// minimize `objective . x` subject to `rows . x = rhs`, `x >= 0`.
#[derive(Clone, Debug)]
pub struct StandardLp {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub value: f64,
    pub point: Vec<f64>,
}

pub fn minimize(lp: &StandardLp) -> Result<LpSolution, BoundsError> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    assert_eq!(lp.rhs.len(), m, "one right-hand side per row");
    for row in &lp.rows {
        assert_eq!(row.len(), n, "every row must match the objective length");
    }

    let width = n + m + 1;
    let mut t = vec![vec![0.0; width]; m];
    for i in 0..m {
        let flip = if lp.rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = flip * lp.rows[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][width - 1] = flip * lp.rhs[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut cost = vec![0.0; width];
    for j in n..n + m {
        cost[j] = 1.0;
    }
    for i in 0..m {
        for j in 0..width {
            cost[j] -= t[i][j];
        }
    }
    iterate(&mut t, &mut basis, &mut cost, n)?;
    let residual = -cost[width - 1];
    if residual > LP_TOL {
        return Err(BoundsError::Infeasible {
            detail: format!("phase-one residual {residual:.3e}"),
        });
    }

    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > LP_TOL) {
                pivot(&mut t, &mut basis, &mut cost, i, j);
            }
        }
    }

    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(&lp.objective);
    for i in 0..m {
        let b = basis[i];
        if b < n && cost[b] != 0.0 {
            let c = cost[b];
            for j in 0..width {
                cost[j] -= c * t[i][j];
            }
        }
    }
    iterate(&mut t, &mut basis, &mut cost, n)?;

    let mut point = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            point[basis[i]] = t[i][width - 1].max(0.0);
        }
    }
    let value = lp.objective.iter().zip(&point).map(|(c, x)| c * x).sum();
    Ok(LpSolution { value, point })
}

pub fn maximize(lp: &StandardLp) -> Result<LpSolution, BoundsError> {
    let negated = StandardLp {
        objective: lp.objective.iter().map(|c| -c).collect(),
        rows: lp.rows.clone(),
        rhs: lp.rhs.clone(),
    };
    let sol = minimize(&negated)?;
    Ok(LpSolution { value: -sol.value, point: sol.point })
}

/// Runs Bland-rule pivots until no structural column (index below
/// `structural`) has a negative reduced cost. Artificial columns never
/// enter, so a variable that phase one drove out stays out.
fn iterate(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &mut [f64],
    structural: usize,
) -> Result<(), BoundsError> {
    let width = cost.len();
    for _ in 0..MAX_PIVOTS {
        let entering = (0..structural).find(|&j| cost[j] < -LP_TOL);
        let Some(j) = entering else { return Ok(()) };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[j] > LP_TOL {
                let ratio = row[width - 1] / row[j];
                let better = match leave {
                    None => true,
                    Some((best_i, best)) => {
                        ratio < best - LP_TOL
                            || (ratio < best + LP_TOL && basis[i] < basis[best_i])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((i, _)) = leave else { return Err(BoundsError::Unbounded) };
        pivot(t, basis, cost, i, j);
    }
    Err(BoundsError::Infeasible { detail: "pivot limit reached".into() })
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], cost: &mut [f64], r: usize, c: usize) {
    let width = cost.len();
    let p = t[r][c];
    for j in 0..width {
        t[r][j] /= p;
    }
    t[r][c] = 1.0;
    for i in 0..t.len() {
        if i != r && t[i][c] != 0.0 {
            let f = t[i][c];
            for j in 0..width {
                t[i][j] -= f * t[r][j];
            }
            t[i][c] = 0.0;
        }
    }
    if cost[c] != 0.0 {
        let f = cost[c];
        for j in 0..width {
            cost[j] -= f * t[r][j];
        }
        cost[c] = 0.0;
    }
    basis[r] = c;
}
