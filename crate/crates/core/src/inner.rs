//! Inner minimisers used for `argmin_{z∈C} L(z, μ)` and reference minima.

use crate::hull;
use crate::vecops::{argmin_by, dot, lerp, norm_inf};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InnerError {
    #[error("inner solver stopped after {iterations} iterations with residual {residual:.3e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("empty feasible set")]
    EmptySet,
}

/// Feasible region handed to the inner solver.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Box { lo: &'a [f64], hi: &'a [f64] },
    Hull(&'a [Vec<f64>]),
}

impl Region<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lo, .. } => lo.len(),
            Region::Hull(p) => p.first().map_or(0, Vec::len),
        }
    }

    /// Minimiser of `cᵀx` over the region; ties go to the lowest index / lower bound.
    pub fn linear_oracle(&self, c: &[f64]) -> Vec<f64> {
        match self {
            Region::Box { lo, hi } => c
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .map(|(ci, (l, h))| if *ci < 0.0 { *h } else { *l })
                .collect(),
            Region::Hull(points) => {
                let (j, _) = argmin_by(points.iter().map(|x| dot(c, x))).expect("non-empty hull");
                points[j].clone()
            }
        }
    }

    pub fn project_box(&self, z: &mut [f64]) {
        if let Region::Box { lo, hi } = self {
            for ((v, l), h) in z.iter_mut().zip(lo.iter()).zip(hi.iter()) {
                *v = v.clamp(*l, *h);
            }
        }
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        match self {
            Region::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            Region::Hull(points) => hull::contains(points, z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    /// Bracket width for one-dimensional solves, Frank-Wolfe gap otherwise.
    pub residual: f64,
}

/// Projected-gradient / golden-section / Frank-Wolfe minimiser.
#[derive(Debug, Clone, Copy)]
pub struct InnerSolver {
    pub tol: f64,
    pub max_iter: usize,
    /// Report non-convergence as an error instead of returning the last iterate.
    pub strict: bool,
}

impl Default for InnerSolver {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            strict: true,
        }
    }
}

type Objective<'a> = &'a dyn Fn(&[f64]) -> f64;
type Gradient<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

impl InnerSolver {
    pub fn lenient() -> Self {
        Self {
            strict: false,
            ..Self::default()
        }
    }

    pub fn minimize(
        &self,
        f: Objective<'_>,
        grad: Option<Gradient<'_>>,
        region: Region<'_>,
        start: &[f64],
    ) -> Result<Minimum, InnerError> {
        match region {
            Region::Box { lo, hi } if lo.len() == 1 => Ok(self.golden(f, lo[0], hi[0])),
            Region::Box { .. } => self.projected_gradient(f, grad, region, start),
            Region::Hull(points) if points.is_empty() => Err(InnerError::EmptySet),
            Region::Hull(_) => self.frank_wolfe(f, grad, region, start),
        }
    }

    fn golden(&self, f: Objective<'_>, lo: f64, hi: f64) -> Minimum {
        let (point, value, width) = golden_section(|t| f(&[t]), lo, hi, self.tol);
        Minimum {
            point: vec![point],
            value,
            residual: width,
        }
    }

    fn projected_gradient(
        &self,
        f: Objective<'_>,
        grad: Option<Gradient<'_>>,
        region: Region<'_>,
        start: &[f64],
    ) -> Result<Minimum, InnerError> {
        let mut z = start.to_vec();
        region.project_box(&mut z);
        let mut fz = f(&z);
        let mut step = 1.0;
        let mut gap = f64::INFINITY;
        for it in 0..self.max_iter {
            let g = gradient_of(f, grad, &z);
            let s = region.linear_oracle(&g);
            gap = dot(&g, &crate::vecops::sub(&z, &s));
            if gap <= self.tol {
                return Ok(Minimum {
                    point: z,
                    value: fz,
                    residual: gap.max(0.0),
                });
            }
            // Backtracking on the projected step.
            let mut accepted = false;
            for _ in 0..60 {
                let mut cand: Vec<f64> = z.iter().zip(&g).map(|(v, gi)| v - step * gi).collect();
                region.project_box(&mut cand);
                let d = crate::vecops::sub(&cand, &z);
                let fc = f(&cand);
                if fc <= fz + dot(&g, &d) + dot(&d, &d) / (2.0 * step) {
                    let moved = norm_inf(&d);
                    z = cand;
                    fz = fc;
                    accepted = true;
                    step *= 2.0;
                    if moved <= 1e-15 {
                        return self.finish(z, fz, gap, it);
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return self.finish(z, fz, gap, it);
            }
        }
        self.finish(z, fz, gap, self.max_iter)
    }

    fn frank_wolfe(
        &self,
        f: Objective<'_>,
        grad: Option<Gradient<'_>>,
        region: Region<'_>,
        start: &[f64],
    ) -> Result<Minimum, InnerError> {
        let mut z = start.to_vec();
        let mut fz = f(&z);
        let mut gap = f64::INFINITY;
        for _ in 0..self.max_iter {
            let g = gradient_of(f, grad, &z);
            let s = region.linear_oracle(&g);
            gap = dot(&g, &crate::vecops::sub(&z, &s));
            if gap <= self.tol {
                return Ok(Minimum {
                    point: z,
                    value: fz,
                    residual: gap.max(0.0),
                });
            }
            let (t, ft, _) = golden_section(|t| f(&lerp(&z, &s, t)), 0.0, 1.0, 1e-12);
            if ft > fz {
                break;
            }
            z = lerp(&z, &s, t);
            fz = ft;
        }
        self.finish(z, fz, gap, self.max_iter)
    }

    fn finish(&self, z: Vec<f64>, fz: f64, gap: f64, iterations: usize) -> Result<Minimum, InnerError> {
        let residual = gap.max(0.0);
        if self.strict && residual > self.tol.sqrt() {
            return Err(InnerError::NotConverged { iterations, residual });
        }
        Ok(Minimum {
            point: z,
            value: fz,
            residual,
        })
    }
}

/// Central finite differences with step `1e-6`.
pub fn finite_difference_gradient(f: Objective<'_>, z: &[f64]) -> Vec<f64> {
    const H: f64 = 1e-6;
    let mut w = z.to_vec();
    (0..z.len())
        .map(|i| {
            let orig = w[i];
            w[i] = orig + H;
            let up = f(&w);
            w[i] = orig - H;
            let down = f(&w);
            w[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn gradient_of(f: Objective<'_>, grad: Option<Gradient<'_>>, z: &[f64]) -> Vec<f64> {
    match grad {
        Some(g) => g(z),
        None => finite_difference_gradient(f, z),
    }
}

/// Golden-section search for a unimodal function on `[lo, hi]`.
/// Returns `(argmin, value, final bracket width)`.
pub fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // The endpoints are candidates too: the minimum of a monotone function sits there.
    let mid = 0.5 * (a + b);
    let cands = [(lo, f(lo)), (hi, f(hi)), (mid, f(mid))];
    let (x, v) = cands
        .into_iter()
        .fold((mid, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    (x, v, b - a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_interior_and_boundary() {
        let (x, v, _) = golden_section(|t| (t - 0.3) * (t - 0.3), 0.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8 && v < 1e-15);
        let (x, _, _) = golden_section(|t| t, 0.0, 1.0, 1e-10);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn projected_gradient_on_box() {
        let f = |z: &[f64]| (z[0] - 2.0).powi(2) + (z[1] + 0.5).powi(2);
        let lo = [0.0, 0.0];
        let hi = [1.0, 1.0];
        let m = InnerSolver::default()
            .minimize(&f, None, Region::Box { lo: &lo, hi: &hi }, &[0.5, 0.5])
            .unwrap();
        assert!((m.point[0] - 1.0).abs() < 1e-8 && m.point[1].abs() < 1e-8);
    }

    #[test]
    fn frank_wolfe_on_hull_vertex_solution() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let f = |z: &[f64]| (z[0] - 2.0).powi(2) + z[1] * z[1];
        let m = InnerSolver::default()
            .minimize(&f, None, Region::Hull(&pts), &[0.0, 0.0])
            .unwrap();
        assert!((m.point[0] - 1.0).abs() < 1e-6 && m.point[1].abs() < 1e-6);
    }

    #[test]
    fn finite_differences_match_analytic() {
        let f = |z: &[f64]| z[0].powi(3) + 2.0 * z[1];
        let g = finite_difference_gradient(&f, &[1.5, -1.0]);
        assert!((g[0] - 6.75).abs() < 1e-6 && (g[1] - 2.0).abs() < 1e-6);
    }
}
