//! Convex-hull membership and barycentric (simplex-weight) decomposition.
//!
//! Given points `x_1, …, x_p` and a target `z`, find weights `a ⪰ 0` with
//! `Σ a_j = 1` and `Σ a_j x_j = z`. Three routes are used:
//!
//! * one-dimensional point sets: the two points bracketing `z`;
//! * at most `n + 1` affinely independent points: the unique barycentric
//!   solution of the square/overdetermined linear system;
//! * everything else: a phase-one simplex with Bland's (lowest index) pivoting,
//!   whose basic solution has at most `n + 1` nonzero weights.

use thiserror::Error;

/// Residual allowed between `Σ a_j x_j` and the target.
pub const HULL_TOLERANCE: f64 = 1e-9;

const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HullError {
    #[error("no points to decompose over")]
    Empty,
    #[error("point has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("point lies outside the convex hull (residual {residual:.3e})")]
    Outside { residual: f64 },
}

/// Simplex weights of `z` with respect to `points`.
pub fn decompose(points: &[Vec<f64>], z: &[f64]) -> Result<Vec<f64>, HullError> {
    let p = points.len();
    if p == 0 {
        return Err(HullError::Empty);
    }
    let n = points[0].len();
    if z.len() != n {
        return Err(HullError::Dimension {
            expected: n,
            got: z.len(),
        });
    }
    if let Some(j) = points.iter().position(|x| same_point(x, z)) {
        let mut a = vec![0.0; p];
        a[j] = 1.0;
        return Ok(a);
    }
    if n == 1 {
        return bracket_1d(points, z[0]);
    }
    if p <= n + 1 {
        if let Some(a) = barycentric(points, z) {
            return Ok(a);
        }
    }
    phase_one(points, z)
}

/// `true` when `z` is in the convex hull of `points` up to [`HULL_TOLERANCE`].
pub fn contains(points: &[Vec<f64>], z: &[f64]) -> bool {
    decompose(points, z).is_ok()
}

/// `‖Σ a_j x_j − z‖_∞`.
pub fn residual(points: &[Vec<f64>], a: &[f64], z: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for (i, zi) in z.iter().enumerate() {
        let v: f64 = points.iter().zip(a).map(|(x, w)| w * x[i]).sum();
        worst = worst.max((v - zi).abs());
    }
    worst
}

fn same_point(x: &[f64], z: &[f64]) -> bool {
    x.iter().zip(z).all(|(a, b)| (a - b).abs() <= 1e-15)
}

fn bracket_1d(points: &[Vec<f64>], z: f64) -> Result<Vec<f64>, HullError> {
    let mut below: Option<(usize, f64)> = None;
    let mut above: Option<(usize, f64)> = None;
    for (j, x) in points.iter().enumerate() {
        let v = x[0];
        if v <= z && below.is_none_or(|(_, b)| v > b) {
            below = Some((j, v));
        }
        if v >= z && above.is_none_or(|(_, b)| v < b) {
            above = Some((j, v));
        }
    }
    let lo = points.iter().map(|x| x[0]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max);
    let outside = |residual: f64| HullError::Outside { residual };
    match (below, above) {
        (Some((i, vi)), Some((j, vj))) => {
            let mut a = vec![0.0; points.len()];
            if i == j || vj == vi {
                a[i] = 1.0;
            } else {
                let t = (z - vi) / (vj - vi);
                a[i] = 1.0 - t;
                a[j] = t;
            }
            Ok(a)
        }
        (None, Some((j, _))) if lo - z <= HULL_TOLERANCE => {
            let mut a = vec![0.0; points.len()];
            a[j] = 1.0;
            Ok(a)
        }
        (Some((i, _)), None) if z - hi <= HULL_TOLERANCE => {
            let mut a = vec![0.0; points.len()];
            a[i] = 1.0;
            Ok(a)
        }
        (None, _) => Err(outside(lo - z)),
        (_, None) => Err(outside(z - hi)),
    }
}

/// Solves `[X; 1ᵀ] a = [z; 1]` by least squares; `None` when the system is
/// rank deficient or the solution is not a valid weight vector.
fn barycentric(points: &[Vec<f64>], z: &[f64]) -> Option<Vec<f64>> {
    let p = points.len();
    let n = z.len();
    // Normal equations of the augmented system.
    let col = |j: usize, i: usize| if i < n { points[j][i] } else { 1.0 };
    let rhs_at = |i: usize| if i < n { z[i] } else { 1.0 };
    let mut m = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            m[r][c] = (0..=n).map(|i| col(r, i) * col(c, i)).sum();
        }
        m[r][p] = (0..=n).map(|i| col(r, i) * rhs_at(i)).sum();
    }
    let scale = m
        .iter()
        .flat_map(|row| row[..p].iter())
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(1.0);
    for k in 0..p {
        let piv = (k..p).max_by(|&a, &b| m[a][k].abs().total_cmp(&m[b][k].abs()))?;
        if m[piv][k].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(k, piv);
        for r in 0..p {
            if r != k {
                let f = m[r][k] / m[k][k];
                if f != 0.0 {
                    for c in k..=p {
                        m[r][c] -= f * m[k][c];
                    }
                }
            }
        }
    }
    let mut a: Vec<f64> = (0..p).map(|k| m[k][p] / m[k][k]).collect();
    if a.iter().any(|&w| w < -1e-12) {
        return None;
    }
    for w in a.iter_mut() {
        *w = w.max(0.0);
    }
    let s: f64 = a.iter().sum();
    a.iter_mut().for_each(|w| *w /= s);
    (residual(points, &a, z) <= HULL_TOLERANCE).then_some(a)
}

/// Phase-one simplex on `[X; 1ᵀ] a + s = [z; 1]`, minimising `Σ s`.
fn phase_one(points: &[Vec<f64>], z: &[f64]) -> Result<Vec<f64>, HullError> {
    let p = points.len();
    let n = z.len();
    let rows = n + 1;
    let cols = p + rows;
    let rhs = cols;
    let mut t = vec![vec![0.0; cols + 1]; rows];
    for i in 0..rows {
        let (b, sign) = {
            let b = if i < n { z[i] } else { 1.0 };
            if b < 0.0 {
                (-b, -1.0)
            } else {
                (b, 1.0)
            }
        };
        for (j, x) in points.iter().enumerate() {
            t[i][j] = sign * if i < n { x[i] } else { 1.0 };
        }
        t[i][p + i] = 1.0;
        t[i][rhs] = b;
    }
    let mut basis: Vec<usize> = (p..p + rows).collect();
    // Reduced costs of the phase-one objective.
    let mut d = vec![0.0; cols + 1];
    for row in &t {
        for j in 0..p {
            d[j] -= row[j];
        }
        d[rhs] -= row[rhs];
    }

    let max_iter = 50 * (cols + rows);
    for _ in 0..max_iter {
        // Bland: lowest-index structural column with negative reduced cost.
        let Some(e) = (0..p).find(|&j| d[j] < -PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            if t[i][e] > PIVOT_EPS {
                let ratio = t[i][rhs] / t[i][e];
                match leave {
                    Some((l, r)) if ratio > r + 1e-15 || (ratio >= r - 1e-15 && basis[i] > basis[l]) => {}
                    _ => leave = Some((i, ratio)),
                }
            }
        }
        let Some((l, _)) = leave else { break };
        pivot(&mut t, &mut d, l, e);
        basis[l] = e;
    }

    let mut a = vec![0.0; p];
    for (i, &b) in basis.iter().enumerate() {
        if b < p {
            a[b] = t[i][rhs].max(0.0);
        }
    }
    let s: f64 = a.iter().sum();
    if s > 0.0 {
        a.iter_mut().for_each(|w| *w /= s);
    }
    let res = residual(points, &a, z).max((s - 1.0).abs());
    if res <= HULL_TOLERANCE {
        Ok(a)
    } else {
        Err(HullError::Outside { residual: res })
    }
}

fn pivot(t: &mut [Vec<f64>], d: &mut [f64], l: usize, e: usize) {
    let pv = t[l][e];
    for v in t[l].iter_mut() {
        *v /= pv;
    }
    let prow = t[l].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != l {
            let f = row[e];
            if f != 0.0 {
                for (v, pr) in row.iter_mut().zip(&prow) {
                    *v -= f * pr;
                }
            }
        }
    }
    let f = d[e];
    for (v, pr) in d.iter_mut().zip(&prow) {
        *v -= f * pr;
    }
}
