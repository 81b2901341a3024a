//! Convex program model: objective, constraints, ground and action sets,
//! separability, Lagrangian and dual evaluation.
//!
//! Coordinates and constraint indices are zero-based throughout the API.

use crate::hull;
use crate::inner::{finite_difference_gradient, InnerError, InnerSolver, Minimum, Region};
use crate::vecops::{argmin_by, dot, mat_t_vec, mat_vec, norm2, norm_inf, sub};
use rand::Rng;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("multiplier component {index} is negative ({value})")]
    NegativeMultiplier { index: usize, value: f64 },
    #[error("action set is empty")]
    EmptyActionSet,
    #[error("action points have inconsistent dimensions")]
    RaggedActionSet,
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("ground set does not equal conv(D): {0}")]
    GroundMismatch(String),
    #[error("update sets are not admissible: {0}")]
    NotAdmissible(String),
    #[error("Slater point is not strictly feasible (min slack {upsilon})")]
    SlaterViolated { upsilon: f64 },
    #[error("point lies outside the ground set")]
    OutsideGroundSet,
    #[error(transparent)]
    Inner(#[from] InnerError),
}

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorValueFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// A real-valued function with an optional analytic subgradient.
#[derive(Clone)]
pub struct ScalarFn {
    value: ValueFn,
    gradient: Option<VectorValueFn>,
}

impl ScalarFn {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(f),
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        (self.value)(z)
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Analytic subgradient when present, central differences otherwise.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(z),
            None => finite_difference_gradient(&|w| (self.value)(w), z),
        }
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFn")
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

/// Constraint map `g : ℝⁿ → ℝᵐ`, `g(z) ⪯ 0`.
#[derive(Clone)]
pub enum Constraints {
    /// `g(z) = A z − b`.
    Linear { a: Vec<Vec<f64>>, b: Vec<f64> },
    General {
        m: usize,
        value: VectorValueFn,
        jacobian: Option<MatrixFn>,
    },
}

impl Constraints {
    pub fn linear(a: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        Constraints::Linear { a, b }
    }

    pub fn general(m: usize, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Constraints::General {
            m,
            value: Arc::new(g),
            jacobian: None,
        }
    }

    /// Attaches an analytic Jacobian (rows are constraint gradients).
    pub fn with_jacobian(self, j: impl Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static) -> Self {
        match self {
            Constraints::General { m, value, .. } => Constraints::General {
                m,
                value,
                jacobian: Some(Arc::new(j)),
            },
            lin => lin,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Constraints::Linear { b, .. } => b.len(),
            Constraints::General { m, .. } => *m,
        }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Constraints::Linear { a, b } => sub(&mat_vec(a, z), b),
            Constraints::General { value, .. } => value(z),
        }
    }

    /// `m × n` Jacobian; central differences when no analytic form is attached.
    pub fn jacobian(&self, z: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Constraints::Linear { a, .. } => a.clone(),
            Constraints::General { jacobian: Some(j), .. } => j(z),
            Constraints::General { m, value, .. } => (0..*m)
                .map(|i| finite_difference_gradient(&|w| value(w)[i], z))
                .collect(),
        }
    }

    /// `(A, b)` for linear constraints.
    pub fn as_linear(&self) -> Option<(&[Vec<f64>], &[f64])> {
        match self {
            Constraints::Linear { a, b } => Some((a, b)),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Constraints::Linear { .. })
    }

    /// `∇_z (μᵀ g)(z)`.
    pub fn weighted_gradient(&self, z: &[f64], mu: &[f64]) -> Vec<f64> {
        match self {
            Constraints::Linear { a, .. } => mat_t_vec(a, mu, z.len()),
            _ => mat_t_vec(&self.jacobian(z), mu, z.len()),
        }
    }
}

impl fmt::Debug for Constraints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraints::Linear { a, b } => f.debug_struct("Linear").field("a", a).field("b", b).finish(),
            Constraints::General { m, jacobian, .. } => f
                .debug_struct("General")
                .field("m", m)
                .field("analytic_jacobian", &jacobian.is_some())
                .finish(),
        }
    }
}

/// Finite action set `D = {x_1, …, x_|D|}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    points: Vec<Vec<f64>>,
}

impl ActionSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        let first = points.first().ok_or(ProblemError::EmptyActionSet)?;
        let n = first.len();
        if n == 0 || points.iter().any(|p| p.len() != n) {
            return Err(ProblemError::RaggedActionSet);
        }
        Ok(Self { points })
    }

    /// `{lo, lo+1, …, hi}ⁿ` in lexicographic order.
    pub fn integer_grid(n: usize, lo: i64, hi: i64) -> Result<Self, ProblemError> {
        if n == 0 || hi < lo {
            return Err(ProblemError::EmptyActionSet);
        }
        let levels: Vec<f64> = (lo..=hi).map(|v| v as f64).collect();
        let mut points: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..n {
            points = points
                .into_iter()
                .flat_map(|p| {
                    levels.iter().map(move |&l| {
                        let mut q = p.clone();
                        q.push(l);
                        q
                    })
                })
                .collect();
        }
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(Vec::as_slice)
    }

    /// Diameter `max ‖x_i − x_j‖₂`, attained at points of `D` for `conv(D)`.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0_f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(crate::vecops::dist2(a, b));
            }
        }
        best
    }

    /// Induced ∞-norm of `X = [x_1 … x_|D|]` (largest absolute row sum).
    pub fn matrix_inf_norm(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.points.iter().map(|x| x[i].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry of `X`.
    pub fn max_abs_entry(&self) -> f64 {
        self.points.iter().map(|x| norm_inf(x)).fold(0.0, f64::max)
    }

    /// Distinct projections onto `coords`, in first-seen order.
    pub fn project(&self, coords: &[usize]) -> ActionSet {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for x in &self.points {
            let p: Vec<f64> = coords.iter().map(|&c| x[c]).collect();
            if !out.contains(&p) {
                out.push(p);
            }
        }
        ActionSet { points: out }
    }

    pub fn contains_in_hull(&self, z: &[f64]) -> bool {
        hull::contains(&self.points, z)
    }

    /// Random point of `conv(D)` as an explicit convex combination.
    pub fn sample_hull<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let w: Vec<f64> = (0..self.len()).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = w.iter().sum();
        let mut z = vec![0.0; self.dim()];
        for (x, wi) in self.points.iter().zip(&w) {
            for (zi, xi) in z.iter_mut().zip(x) {
                *zi += wi / s * xi;
            }
        }
        z
    }
}

/// The convex set `C`.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Hull(ActionSet),
}

impl GroundSet {
    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProblemError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(ProblemError::InvalidBox("bound lengths differ or are empty".into()));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
        {
            return Err(ProblemError::InvalidBox("need finite lo ≤ hi".into()));
        }
        Ok(GroundSet::Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            GroundSet::Box { lo, .. } => lo.len(),
            GroundSet::Hull(d) => d.dim(),
        }
    }

    pub fn region(&self) -> Region<'_> {
        match self {
            GroundSet::Box { lo, hi } => Region::Box { lo, hi },
            GroundSet::Hull(d) => Region::Hull(d.points()),
        }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim() && self.region().contains(z, 1e-9)
    }

    /// Corner points (box, up to 2¹² corners) or the points of `D`.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self {
            GroundSet::Hull(d) => d.points().to_vec(),
            GroundSet::Box { lo, hi } => {
                let n = lo.len();
                if n > 12 {
                    return vec![lo.clone(), hi.clone()];
                }
                (0..1usize << n)
                    .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect())
                    .collect()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            GroundSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            GroundSet::Hull(d) => d.sample_hull(rng),
        }
    }

    /// Interior reference point (box centre or centroid of `D`).
    pub fn center(&self) -> Vec<f64> {
        match self {
            GroundSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            GroundSet::Hull(d) => {
                let k = d.len() as f64;
                (0..d.dim()).map(|i| d.iter().map(|x| x[i]).sum::<f64>() / k).collect()
            }
        }
    }
}

/// One block `u` of a separable problem: `f^u` and `g^u` act on `z^[u]`.
#[derive(Debug, Clone)]
pub struct Block {
    pub coords: Vec<usize>,
    pub objective: ScalarFn,
    pub constraints: Constraints,
}

impl Block {
    pub fn lagrangian(&self, w: &[f64], mu: &[f64]) -> f64 {
        self.objective.eval(w) + dot(mu, &self.constraints.eval(w))
    }
}

/// `𝒰`-separable structure: a partition into blocks, optionally plus the full set.
#[derive(Debug, Clone)]
pub struct SeparableStructure {
    update_sets: Vec<Vec<usize>>,
    blocks: Vec<Block>,
}

impl SeparableStructure {
    /// `include_full` adds `{0, …, n−1}` to the admissible update sets.
    pub fn new(n: usize, blocks: Vec<Block>, include_full: bool) -> Result<Self, ProblemError> {
        let mut update_sets: Vec<Vec<usize>> = blocks.iter().map(|b| b.coords.clone()).collect();
        if include_full && blocks.len() > 1 {
            update_sets.push((0..n).collect());
        }
        check_admissible(n, &update_sets)?;
        Ok(Self { update_sets, blocks })
    }

    pub fn update_sets(&self) -> &[Vec<usize>] {
        &self.update_sets
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_of(&self, coord: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.coords.contains(&coord))
    }

    /// Largest `|Σ_u f^u(z^[u]) − f(z)|` and `‖Σ_u g^u − g‖_∞` over samples.
    pub fn separability_residual<R: Rng + ?Sized>(&self, problem: &ConvexProblem, rng: &mut R, samples: usize) -> f64 {
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let z = problem.ground_set.sample(rng);
            let mut f_sum = 0.0;
            let mut g_sum = vec![0.0; problem.m()];
            for b in &self.blocks {
                let w: Vec<f64> = b.coords.iter().map(|&c| z[c]).collect();
                f_sum += b.objective.eval(&w);
                for (acc, v) in g_sum.iter_mut().zip(b.constraints.eval(&w)) {
                    *acc += v;
                }
            }
            worst = worst.max((f_sum - problem.objective(&z)).abs());
            worst = worst.max(crate::vecops::dist_inf(&g_sum, &problem.constraint_values(&z)));
        }
        worst
    }
}

/// Admissible update set check: a partition of `{0..n}`, optionally plus the full set.
pub fn check_admissible(n: usize, sets: &[Vec<usize>]) -> Result<(), ProblemError> {
    if sets.is_empty() {
        return Err(ProblemError::NotAdmissible("no update sets".into()));
    }
    let full: Vec<usize> = (0..n).collect();
    let is_full = |s: &Vec<usize>| {
        let mut t = s.clone();
        t.sort_unstable();
        t == full
    };
    let full_count = sets.iter().filter(|s| is_full(s)).count();
    let parts: Vec<&Vec<usize>> = if sets.len() == 1 {
        sets.iter().collect()
    } else {
        if full_count > 1 {
            return Err(ProblemError::NotAdmissible("full set listed twice".into()));
        }
        sets.iter().filter(|s| !is_full(s)).collect()
    };
    let mut seen = vec![false; n];
    for s in parts {
        if s.is_empty() {
            return Err(ProblemError::NotAdmissible("empty block".into()));
        }
        for &c in s {
            if c >= n {
                return Err(ProblemError::NotAdmissible(format!("coordinate {c} ≥ n = {n}")));
            }
            if seen[c] {
                return Err(ProblemError::NotAdmissible(format!(
                    "coordinate {c} appears in two blocks"
                )));
            }
            seen[c] = true;
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(ProblemError::NotAdmissible(format!("coordinate {c} is never updated")));
    }
    Ok(())
}

/// Bounded-curvature constants `μ_f` and `μ_g^(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    pub objective: f64,
    pub constraints: Vec<f64>,
}

impl Curvature {
    /// `μ_L = μ_f + λ̄ 1ᵀμ_g`; linear constraints contribute nothing.
    pub fn lagrangian(&self, clip: Option<f64>) -> f64 {
        let s: f64 = self.constraints.iter().sum();
        if s == 0.0 {
            self.objective
        } else {
            self.objective + clip.unwrap_or(f64::INFINITY) * s
        }
    }
}

/// Problem `P` (with `C = conv(D)` when an action set is attached).
#[derive(Debug, Clone)]
pub struct ConvexProblem {
    n: usize,
    objective: ScalarFn,
    constraints: Constraints,
    ground_set: GroundSet,
    action_set: Option<ActionSet>,
    separability: Option<SeparableStructure>,
    curvature: Option<Curvature>,
}

impl ConvexProblem {
    pub fn new(objective: ScalarFn, constraints: Constraints, ground_set: GroundSet) -> Result<Self, ProblemError> {
        let n = ground_set.dim();
        if let Some((a, _)) = constraints.as_linear() {
            if let Some(row) = a.iter().find(|r| r.len() != n) {
                return Err(ProblemError::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
        }
        Ok(Self {
            n,
            objective,
            constraints,
            ground_set,
            action_set: None,
            separability: None,
            curvature: None,
        })
    }

    /// Attaches `D`. A box ground set is kept only if it equals `conv(D)`.
    pub fn with_actions(mut self, actions: ActionSet) -> Result<Self, ProblemError> {
        if actions.dim() != self.n {
            return Err(ProblemError::Dimension {
                expected: self.n,
                got: actions.dim(),
            });
        }
        match &self.ground_set {
            GroundSet::Hull(d) if d == &actions => {}
            GroundSet::Hull(_) => return Err(ProblemError::GroundMismatch("hull of a different set".into())),
            GroundSet::Box { .. } => {
                if actions.iter().any(|x| !self.ground_set.contains(x)) {
                    return Err(ProblemError::GroundMismatch("action outside the box".into()));
                }
                if self.ground_set.vertices().iter().any(|v| !actions.contains_in_hull(v)) {
                    return Err(ProblemError::GroundMismatch("box corner outside conv(D)".into()));
                }
            }
        }
        self.action_set = Some(actions);
        Ok(self)
    }

    pub fn with_separability(mut self, sep: SeparableStructure) -> Result<Self, ProblemError> {
        check_admissible(self.n, sep.update_sets())?;
        self.separability = Some(sep);
        Ok(self)
    }

    pub fn with_curvature(mut self, c: Curvature) -> Self {
        self.curvature = Some(c);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.constraints.m()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.objective.eval(z)
    }

    pub fn objective_fn(&self) -> &ScalarFn {
        &self.objective
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn constraint_values(&self, z: &[f64]) -> Vec<f64> {
        self.constraints.eval(z)
    }

    pub fn ground_set(&self) -> &GroundSet {
        &self.ground_set
    }

    pub fn action_set(&self) -> Option<&ActionSet> {
        self.action_set.as_ref()
    }

    pub fn separability(&self) -> Option<&SeparableStructure> {
        self.separability.as_ref()
    }

    pub fn curvature(&self) -> Option<&Curvature> {
        self.curvature.as_ref()
    }

    /// `L(z, λ)` without argument validation.
    pub fn lagrangian(&self, z: &[f64], lambda: &[f64]) -> f64 {
        self.objective(z) + dot(lambda, &self.constraint_values(z))
    }

    /// `∂_z L(z, λ)`.
    pub fn lagrangian_gradient(&self, z: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut g = self.objective.gradient(z);
        for (gi, ci) in g.iter_mut().zip(self.constraints.weighted_gradient(z, lambda)) {
            *gi += ci;
        }
        g
    }

    /// `argmin_{z∈C} L(z, μ)`, solved blockwise when the problem is separable
    /// over a box.
    pub fn argmin_lagrangian(&self, mu: &[f64], solver: &InnerSolver, start: &[f64]) -> Result<Minimum, ProblemError> {
        if let (Some(sep), GroundSet::Box { .. }) = (&self.separability, &self.ground_set) {
            let mut point = start.to_vec();
            let mut residual = 0.0_f64;
            for bi in 0..sep.blocks().len() {
                let m = self.block_argmin(bi, mu, solver, start)?;
                for (c, v) in sep.blocks()[bi].coords.iter().zip(&m.point) {
                    point[*c] = *v;
                }
                residual = residual.max(m.residual);
            }
            let value = self.lagrangian(&point, mu);
            return Ok(Minimum { point, value, residual });
        }
        let f = |z: &[f64]| self.lagrangian(z, mu);
        let g = |z: &[f64]| self.lagrangian_gradient(z, mu);
        let grad: Option<&dyn Fn(&[f64]) -> Vec<f64>> = self.objective.has_gradient().then_some(&g);
        Ok(solver.minimize(&f, grad, self.ground_set.region(), start)?)
    }

    /// `argmin_{w∈C_u} L^u(w, μ)` for block `block` of a separable box problem.
    pub fn block_argmin(
        &self,
        block: usize,
        mu: &[f64],
        solver: &InnerSolver,
        start: &[f64],
    ) -> Result<Minimum, ProblemError> {
        let sep = self
            .separability
            .as_ref()
            .ok_or_else(|| ProblemError::NotAdmissible("problem is not separable".into()))?;
        let GroundSet::Box { lo, hi } = &self.ground_set else {
            return Err(ProblemError::GroundMismatch("block solve needs a box".into()));
        };
        let b = &sep.blocks()[block];
        let blo: Vec<f64> = b.coords.iter().map(|&c| lo[c]).collect();
        let bhi: Vec<f64> = b.coords.iter().map(|&c| hi[c]).collect();
        let bstart: Vec<f64> = b.coords.iter().map(|&c| start[c]).collect();
        let f = |w: &[f64]| b.lagrangian(w, mu);
        Ok(solver.minimize(&f, None, Region::Box { lo: &blo, hi: &bhi }, &bstart)?)
    }

    fn check_args(&self, z: &[f64], lambda: &[f64]) -> Result<(), ProblemError> {
        if z.len() != self.n {
            return Err(ProblemError::Dimension {
                expected: self.n,
                got: z.len(),
            });
        }
        check_multiplier(lambda, self.m())
    }
}

fn check_multiplier(lambda: &[f64], m: usize) -> Result<(), ProblemError> {
    if lambda.len() != m {
        return Err(ProblemError::Dimension {
            expected: m,
            got: lambda.len(),
        });
    }
    if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(ProblemError::NegativeMultiplier { index, value });
    }
    Ok(())
}

/// `L(z, λ) = f(z) + λᵀ g(z)`.
pub fn lagrangian_eval(problem: &ConvexProblem, z: &[f64], lambda: &[f64]) -> Result<f64, ProblemError> {
    problem.check_args(z, lambda)?;
    Ok(problem.lagrangian(z, lambda))
}

/// Value of the dual function together with its inner minimiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub residual: f64,
}

/// `q(λ) = min_{z∈C} L(z, λ)`.
pub fn dual_eval(problem: &ConvexProblem, lambda: &[f64], solver: &InnerSolver) -> Result<DualValue, ProblemError> {
    check_multiplier(lambda, problem.m())?;
    let start = problem.ground_set.center();
    let m = problem.argmin_lagrangian(lambda, solver, &start)?;
    Ok(DualValue {
        value: m.value,
        argmin: m.point,
        residual: m.residual,
    })
}

/// Strictly feasible point `z̄` with slack `υ = min_j −g_j(z̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaterCertificate {
    pub point: Vec<f64>,
    pub upsilon: f64,
    pub f_bar: f64,
}

impl SlaterCertificate {
    pub fn new(problem: &ConvexProblem, point: Vec<f64>) -> Result<Self, ProblemError> {
        if !problem.ground_set.contains(&point) {
            return Err(ProblemError::OutsideGroundSet);
        }
        let upsilon = problem
            .constraint_values(&point)
            .iter()
            .map(|g| -g)
            .fold(f64::INFINITY, f64::min);
        if !(upsilon > 0.0) {
            return Err(ProblemError::SlaterViolated { upsilon });
        }
        let f_bar = problem.objective(&point);
        Ok(Self { point, upsilon, f_bar })
    }
}

/// `𝒬 = (f(z̄) − f* + δ) / υ`, a bound on `‖λ‖₂` over the dual level set `Q_δ`.
pub fn slater_dual_bound(cert: &SlaterCertificate, f_star: f64, delta: f64) -> Result<f64, ProblemError> {
    if !(cert.upsilon > 0.0) {
        return Err(ProblemError::SlaterViolated { upsilon: cert.upsilon });
    }
    Ok((cert.f_bar - f_star + delta.max(0.0)) / cert.upsilon)
}

/// Point of `D` minimising `zᵀx`, with the slack `zᵀ(x − y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentPoint {
    pub index: usize,
    pub point: Vec<f64>,
    pub slack: f64,
}

/// Direct search for `x ∈ D` with `zᵀ(x − y) ≤ 0`; exists for every `y ∈ conv(D)`.
pub fn caratheodory_descent_point(actions: &ActionSet, z: &[f64], y: &[f64]) -> DescentPoint {
    let (index, _) = argmin_by(actions.iter().map(|x| dot(z, x))).expect("action set is non-empty");
    let point = actions.point(index).to_vec();
    let slack = dot(z, &sub(&point, y));
    DescentPoint { index, point, slack }
}

/// Counterexample to `𝒰`-feasibility: `z + U_u(x − z) ∉ conv(D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityWitness {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub update_set: Vec<usize>,
    pub image: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UFeasibility {
    pub feasible: bool,
    /// `true` when every vertex triple was checked.
    pub exact: bool,
    pub witness: Option<FeasibilityWitness>,
}

/// `z + U_u(x − z)`.
pub fn block_replace(z: &[f64], x: &[f64], u: &[usize]) -> Vec<f64> {
    let mut out = z.to_vec();
    for &c in u {
        out[c] = x[c];
    }
    out
}

/// Checks `{z + U_u(x − z) : z ∈ conv(D), x ∈ D, u ∈ 𝒰} ⊂ conv(D)`.
///
/// The map `z ↦ z + U_u(x − z)` is affine, so it suffices to test `z ∈ D`.
/// Sets with more than 64 points are checked on 1000 random triples.
pub fn check_u_feasible(actions: &ActionSet, update_sets: &[Vec<usize>]) -> UFeasibility {
    let test = |z: &[f64], x: &[f64], u: &[usize]| {
        let image = block_replace(z, x, u);
        (!actions.contains_in_hull(&image)).then(|| FeasibilityWitness {
            z: z.to_vec(),
            x: x.to_vec(),
            update_set: u.to_vec(),
            image,
        })
    };
    if actions.len() <= 64 {
        for z in actions.iter() {
            for x in actions.iter() {
                for u in update_sets {
                    if let Some(w) = test(z, x, u) {
                        return UFeasibility {
                            feasible: false,
                            exact: true,
                            witness: Some(w),
                        };
                    }
                }
            }
        }
        return UFeasibility {
            feasible: true,
            exact: true,
            witness: None,
        };
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..1000 {
        let z = actions.sample_hull(&mut rng);
        let x = actions.point(rng.random_range(0..actions.len()));
        let u = &update_sets[rng.random_range(0..update_sets.len())];
        if let Some(w) = test(&z, x, u) {
            return UFeasibility {
                feasible: false,
                exact: false,
                witness: Some(w),
            };
        }
    }
    UFeasibility {
        feasible: true,
        exact: false,
        witness: None,
    }
}

/// Bounds on `‖g(z)‖` over `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintBound {
    /// `ḡ = max_{z∈C} ‖g(z)‖_∞`
    pub inf: f64,
    /// `max_{z∈C} ‖g(z)‖₂`
    pub l2: f64,
    /// `max_{z∈C} ‖∂g(z)‖_∞` (induced row-sum norm of the Jacobian)
    pub jacobian: f64,
}

/// Estimates [`ConstraintBound`]. Linear constraints are maximised exactly at
/// the vertices; otherwise vertices plus `samples` interior points are used
/// and the result is inflated by 5%.
pub fn constraint_bound<R: Rng + ?Sized>(problem: &ConvexProblem, rng: &mut R, samples: usize) -> ConstraintBound {
    let mut pts = problem.ground_set.vertices();
    let exact = problem.constraints.is_linear() && pts.len() < 4096;
    if !exact {
        pts.extend((0..samples).map(|_| problem.ground_set.sample(rng)));
    }
    let mut inf = 0.0_f64;
    let mut l2 = 0.0_f64;
    let mut jac = 0.0_f64;
    for z in &pts {
        let g = problem.constraint_values(z);
        inf = inf.max(norm_inf(&g));
        l2 = l2.max(norm2(&g));
        for row in problem.constraints.jacobian(z) {
            jac = jac.max(row.iter().map(|v| v.abs()).sum());
        }
    }
    let k = if exact { 1.0 } else { 1.05 };
    ConstraintBound {
        inf: inf * k,
        l2: l2 * k,
        jacobian: jac * k,
    }
}

/// Midpoint-convexity spot check of `f` and every `g_j`; returns one message
/// per violation (also logged as warnings).
pub fn spot_check_convexity<R: Rng + ?Sized>(problem: &ConvexProblem, rng: &mut R, pairs: usize) -> Vec<String> {
    let mut warnings = Vec::new();
    for _ in 0..pairs {
        let a = problem.ground_set.sample(rng);
        let b = problem.ground_set.sample(rng);
        let mid = crate::vecops::lerp(&a, &b, 0.5);
        let tol = 1e-9;
        let (fa, fb, fm) = (problem.objective(&a), problem.objective(&b), problem.objective(&mid));
        if fm > 0.5 * (fa + fb) + tol * (1.0 + fa.abs() + fb.abs()) {
            warnings.push(format!("objective not midpoint convex between {a:?} and {b:?}"));
        }
        let (ga, gb, gm) = (
            problem.constraint_values(&a),
            problem.constraint_values(&b),
            problem.constraint_values(&mid),
        );
        for j in 0..problem.m() {
            if gm[j] > 0.5 * (ga[j] + gb[j]) + tol * (1.0 + ga[j].abs() + gb[j].abs()) {
                warnings.push(format!("constraint {j} not midpoint convex between {a:?} and {b:?}"));
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    warnings
}

/// Largest sampled value of `f(z+δ) − f(z) − ∇f(z)ᵀδ − μ‖δ‖²` (≤ 0 when the
/// curvature constant is valid on the samples).
pub fn curvature_excess<R: Rng + ?Sized>(f: &ScalarFn, mu: f64, ground: &GroundSet, rng: &mut R, pairs: usize) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let z = ground.sample(rng);
        let w = ground.sample(rng);
        let delta = sub(&w, &z);
        let lhs = f.eval(&w) - f.eval(&z) - dot(&f.gradient(&z), &delta);
        worst = worst.max(lhs - mu * dot(&delta, &delta));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ConvexProblem {
        ConvexProblem::new(
            ScalarFn::new(|z| z[0] * z[0]).with_gradient(|z| vec![2.0 * z[0]]),
            Constraints::linear(vec![vec![-1.0]], vec![-1.0]),
            GroundSet::new_box(vec![0.0], vec![2.0]).unwrap(),
        )
        .unwrap()
    }

    fn pts(v: &[&[f64]]) -> ActionSet {
        ActionSet::new(v.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn lagrangian_examples() {
        let p = toy();
        assert_eq!(lagrangian_eval(&p, &[1.0], &[2.0]).unwrap(), 1.0);
        assert!((lagrangian_eval(&p, &[0.5], &[3.0]).unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn lagrangian_rejects_bad_arguments() {
        let p = toy();
        assert!(matches!(
            lagrangian_eval(&p, &[1.0], &[-0.1]),
            Err(ProblemError::NegativeMultiplier { index: 0, .. })
        ));
        assert!(matches!(
            lagrangian_eval(&p, &[1.0, 2.0], &[0.0]),
            Err(ProblemError::Dimension { .. })
        ));
    }

    #[test]
    fn dual_examples() {
        let p = toy();
        let s = InnerSolver::default();
        let q = dual_eval(&p, &[2.0], &s).unwrap();
        assert!((q.argmin[0] - 1.0).abs() < 1e-7 && (q.value - 1.0).abs() < 1e-12);
        let q = dual_eval(&p, &[6.0], &s).unwrap();
        assert!((q.argmin[0] - 2.0).abs() < 1e-7 && (q.value + 2.0).abs() < 1e-7);
        let q = dual_eval(&p, &[0.0], &s).unwrap();
        assert!(q.value.abs() < 1e-12);
    }

    #[test]
    fn slater_bound_examples() {
        let p = toy();
        let cert = SlaterCertificate::new(&p, vec![2.0]).unwrap();
        assert_eq!(cert.upsilon, 1.0);
        assert_eq!(slater_dual_bound(&cert, 1.0, 0.0).unwrap(), 3.0);
        assert_eq!(slater_dual_bound(&cert, 1.0, 0.5).unwrap(), 3.5);
        assert_eq!(slater_dual_bound(&cert, cert.f_bar, 0.0).unwrap(), 0.0);
        assert!(matches!(
            SlaterCertificate::new(&p, vec![1.0]),
            Err(ProblemError::SlaterViolated { .. })
        ));
    }

    #[test]
    fn descent_point_examples() {
        let d = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let r = caratheodory_descent_point(&d, &[1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(r.point, vec![0.0, 0.0]);
        assert_eq!(r.slack, -1.0);
        let r = caratheodory_descent_point(&d, &[0.0, 0.0], &[0.5, 0.5]);
        assert_eq!(r.slack, 0.0);
        let line = pts(&[&[0.0], &[1.0]]);
        let r = caratheodory_descent_point(&line, &[-1.0], &[0.3]);
        assert_eq!(r.point, vec![1.0]);
        assert!((r.slack + 0.7).abs() < 1e-15);
    }

    #[test]
    fn u_feasibility_examples() {
        let cube = ActionSet::integer_grid(3, 0, 1).unwrap();
        let singles: Vec<Vec<usize>> = (0..3).map(|i| vec![i]).collect();
        assert!(check_u_feasible(&cube, &singles).feasible);

        let any = pts(&[&[0.0, 0.0], &[1.0, 2.0], &[3.0, 0.5]]);
        assert!(check_u_feasible(&any, &[vec![0, 1]]).feasible);

        let diag = pts(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let r = check_u_feasible(&diag, &[vec![0], vec![1]]);
        assert!(!r.feasible);
        let w = r.witness.unwrap();
        assert_eq!(block_replace(&w.z, &w.x, &w.update_set), w.image);
        assert!(!diag.contains_in_hull(&w.image));
    }

    #[test]
    fn unit_vectors_plus_ones_is_not_the_hypercube() {
        // conv{e_1, e_2, 1} is a triangle; replacing one coordinate can leave it.
        let d = pts(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let r = check_u_feasible(&d, &[vec![0], vec![1]]);
        assert!(!r.feasible);
    }

    #[test]
    fn admissible_update_sets() {
        assert!(check_admissible(3, &[vec![0], vec![1, 2]]).is_ok());
        assert!(check_admissible(3, &[vec![0], vec![1, 2], vec![0, 1, 2]]).is_ok());
        assert!(check_admissible(3, &[vec![2, 0, 1]]).is_ok());
        assert!(check_admissible(3, &[vec![0], vec![0, 1], vec![2]]).is_err());
        assert!(check_admissible(3, &[vec![0], vec![1]]).is_err());
        assert!(check_admissible(2, &[vec![0], vec![3]]).is_err());
    }

    #[test]
    fn box_ground_set_must_equal_hull() {
        let base = || {
            ConvexProblem::new(
                ScalarFn::new(|z| z[0] + z[1]),
                Constraints::linear(vec![vec![1.0, 0.0]], vec![1.0]),
                GroundSet::new_box(vec![0.0, 0.0], vec![8.0, 8.0]).unwrap(),
            )
            .unwrap()
        };
        assert!(base().with_actions(ActionSet::integer_grid(2, 0, 8).unwrap()).is_ok());
        assert!(matches!(
            base().with_actions(ActionSet::integer_grid(2, 0, 1).unwrap()),
            Err(ProblemError::GroundMismatch(_))
        ));
    }

    #[test]
    fn constraint_bound_linear_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = constraint_bound(&toy(), &mut rng, 100);
        assert_eq!(b.inf, 1.0);
        assert_eq!(b.jacobian, 1.0);
    }

    #[test]
    fn convexity_and_curvature_spot_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(spot_check_convexity(&toy(), &mut rng, 200).is_empty());
        let concave = ConvexProblem::new(
            ScalarFn::new(|z| -z[0] * z[0]),
            Constraints::linear(vec![vec![1.0]], vec![5.0]),
            GroundSet::new_box(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        assert!(!spot_check_convexity(&concave, &mut rng, 200).is_empty());
        let f = ScalarFn::new(|z| z[0] * z[0]);
        let g = GroundSet::new_box(vec![-1.0], vec![1.0]).unwrap();
        assert!(curvature_excess(&f, 1.0, &g, &mut rng, 500) <= 1e-8);
        assert!(curvature_excess(&f, 0.5, &g, &mut rng, 500) > 0.0);
    }
}
