//! Descent over a finite action set: direct search and Frank-Wolfe steps,
//! unsynchronised block schedules, step-size and slow-variation rules.

use crate::inner::{InnerSolver, Region};
use crate::problem::{
    block_replace, check_admissible, check_u_feasible, ActionSet, ConvexProblem, GroundSet, ProblemError,
};
use crate::vecops::{argmin_tied, dist_inf, dot};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescentError {
    #[error("invalid descent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("no action set attached to the problem")]
    NoActions,
    #[error("action set is not feasible for the update sets (witness image {0:?})")]
    NotUFeasible(Vec<f64>),
    #[error(transparent)]
    Inner(#[from] crate::inner::InnerError),
}

/// Step size, tolerances and constants of the descent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    /// `β ∈ (0, 1)`
    pub beta: f64,
    /// `ε′ > 0`
    pub eps_prime: f64,
    /// `γ ∈ (0, 1)`
    pub gamma: f64,
    /// `γ₁ ∈ (0, γ/2)`
    pub gamma1: f64,
    /// Longest covering interval `N`.
    pub n_cover: usize,
    /// Curvature constant `μ_F`.
    pub mu_f: f64,
    /// Diameter `x̄_D`.
    pub diameter: f64,
    /// Boundaries skipped before the gap is enforced; `max(10N, 100)` when `None`.
    pub burn_in: Option<usize>,
}

impl DescentConfig {
    /// Config with `β` set to [`Self::step_cap`] and `γ₁ = γ/4`.
    pub fn at_cap(eps_prime: f64, gamma: f64, n_cover: usize, mu_f: f64, diameter: f64) -> Result<Self, DescentError> {
        let mut c = Self {
            beta: 0.0,
            eps_prime,
            gamma,
            gamma1: gamma / 4.0,
            n_cover,
            mu_f,
            diameter,
            burn_in: None,
        };
        c.beta = c.step_cap().min(0.5);
        c.validate()?;
        Ok(c)
    }

    /// `(1 − γ) γ min{ε′ / (N μ_F x̄_D²), 1}`.
    pub fn step_cap(&self) -> f64 {
        let denom = self.n_cover as f64 * self.mu_f * self.diameter * self.diameter;
        let ratio = if denom > 0.0 {
            self.eps_prime / denom
        } else {
            f64::INFINITY
        };
        (1.0 - self.gamma) * self.gamma * ratio.min(1.0)
    }

    /// Allowed `sup_z |F_{k+1}(z) − F_k(z)|`: `γ₁ γ β ε′ / (2N)`.
    pub fn slow_variation_bound(&self) -> f64 {
        self.gamma1 * self.gamma * self.beta * self.eps_prime / (2.0 * self.n_cover as f64)
    }

    /// Largest multiplier step `α` keeping Lagrangian iterates slowly varying,
    /// given `max_{z∈C} ‖g(z)‖₂`: `γ₁ γ β ε′ / (2N ‖g‖₂²)`.
    pub fn lagrangian_alpha_cap(&self, g_l2: f64) -> f64 {
        self.slow_variation_bound() / (g_l2 * g_l2)
    }

    /// Gap tolerance `(|𝒰| + 1) ε′`.
    pub fn gap_tolerance(&self, n_sets: usize) -> f64 {
        (n_sets as f64 + 1.0) * self.eps_prime
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or((10 * self.n_cover).max(100))
    }

    pub fn validate(&self) -> Result<(), DescentError> {
        let bad = |m: String| Err(DescentError::Config(m));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("β = {} is outside (0, 1)", self.beta));
        }
        if !(self.eps_prime > 0.0) {
            return bad(format!("ε′ = {} must be positive", self.eps_prime));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("γ = {} is outside (0, 1)", self.gamma));
        }
        if !(self.gamma1 > 0.0 && self.gamma1 < self.gamma / 2.0) {
            return bad(format!("γ₁ = {} is outside (0, γ/2)", self.gamma1));
        }
        if self.n_cover == 0 {
            return bad("N must be at least 1".into());
        }
        if !(self.mu_f >= 0.0) || !(self.diameter >= 0.0) {
            return bad("μ_F and x̄_D must be nonnegative".into());
        }
        let cap = self.step_cap();
        if self.beta > cap * (1.0 + 1e-12) {
            return bad(format!("β = {} exceeds the step cap {cap:.6e}", self.beta));
        }
        Ok(())
    }
}

/// How update sets are drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchedulePolicy {
    /// Round-robin over the blocks (the full set, if admissible, is skipped).
    Cyclic,
    /// Always the full set.
    Full,
    /// Repeating pattern of indices into the update sets.
    Custom(Vec<usize>),
}

impl std::str::FromStr for SchedulePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cyclic" => Ok(Self::Cyclic),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown schedule policy `{other}` (custom patterns are lists)")),
        }
    }
}

/// Periodic sequence `u_k ∈ 𝒰` with its covering-interval length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSchedule {
    n: usize,
    sets: Vec<Vec<usize>>,
    pattern: Vec<usize>,
    n_cover: usize,
}

impl UpdateSchedule {
    pub fn n_cover(&self) -> usize {
        self.n_cover
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// Indices into [`Self::sets`] repeated with period `pattern.len()`.
    pub fn pattern(&self) -> &[usize] {
        &self.pattern
    }

    pub fn set_at(&self, k: usize) -> &[usize] {
        &self.sets[self.pattern[k % self.pattern.len()]]
    }

    /// Greedy covering-interval starts `k_0 = 0 < k_1 < …` within `0..steps`.
    pub fn boundaries(&self, steps: usize) -> Vec<usize> {
        let mut out = vec![0];
        let mut seen = vec![false; self.n];
        let mut left = self.n;
        for k in 0..steps {
            for &c in self.set_at(k) {
                if !seen[c] {
                    seen[c] = true;
                    left -= 1;
                }
            }
            if left == 0 {
                out.push(k + 1);
                seen.iter_mut().for_each(|s| *s = false);
                left = self.n;
            }
        }
        out
    }
}

/// Builds a schedule over admissible update sets and computes `N`.
pub fn make_schedule(n: usize, sets: &[Vec<usize>], policy: SchedulePolicy) -> Result<UpdateSchedule, DescentError> {
    check_admissible(n, sets)?;
    let is_full = |s: &Vec<usize>| s.len() == n;
    let pattern: Vec<usize> = match policy {
        SchedulePolicy::Full => vec![sets
            .iter()
            .position(is_full)
            .ok_or_else(|| DescentError::Schedule("full set is not admissible".into()))?],
        SchedulePolicy::Cyclic => {
            let blocks: Vec<usize> = (0..sets.len())
                .filter(|&i| sets.len() == 1 || !is_full(&sets[i]))
                .collect();
            blocks
        }
        SchedulePolicy::Custom(p) => {
            if p.is_empty() || p.iter().any(|&i| i >= sets.len()) {
                return Err(DescentError::Schedule("custom pattern is empty or out of range".into()));
            }
            p
        }
    };
    let mut n_cover = 0;
    for start in 0..pattern.len() {
        let mut seen = vec![false; n];
        let mut len = 0;
        while seen.contains(&false) {
            if len >= pattern.len() {
                return Err(DescentError::Schedule("pattern never covers every coordinate".into()));
            }
            for &c in &sets[pattern[(start + len) % pattern.len()]] {
                seen[c] = true;
            }
            len += 1;
        }
        n_cover = n_cover.max(len);
    }
    Ok(UpdateSchedule {
        n,
        sets: sets.to_vec(),
        pattern,
        n_cover,
    })
}

/// Outcome of a single descent step.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentStep {
    pub index: usize,
    pub x: Vec<f64>,
    pub z_next: Vec<f64>,
}

fn block_move(z: &[f64], x: &[f64], u: &[usize], beta: f64) -> Vec<f64> {
    let mut out = z.to_vec();
    for &c in u {
        out[c] = z[c] + beta * (x[c] - z[c]);
    }
    out
}

/// `x ∈ argmin_{x∈D} F(z + β U_u(x − z))`, near-ties to the lowest index, `z ← z + β U_u(x − z)`.
pub fn descent_step_direct(
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    u: &[usize],
    actions: &ActionSet,
    beta: f64,
) -> DescentStep {
    let scores: Vec<f64> = actions.iter().map(|x| f(&block_move(z, x, u, beta))).collect();
    let (index, _) = argmin_tied(&scores).expect("action set is non-empty");
    finish_step(z, u, actions, beta, index)
}

/// `x ∈ argmin_{x∈D} ∂F(z)ᵀ U_u x`, `z ← z + β U_u(x − z)`.
pub fn descent_step_fw(grad: &[f64], z: &[f64], u: &[usize], actions: &ActionSet, beta: f64) -> DescentStep {
    let scores: Vec<f64> = actions
        .iter()
        .map(|x| u.iter().map(|&c| grad[c] * x[c]).sum::<f64>())
        .collect();
    let (index, _) = argmin_tied(&scores).expect("action set is non-empty");
    finish_step(z, u, actions, beta, index)
}

fn finish_step(z: &[f64], u: &[usize], actions: &ActionSet, beta: f64, index: usize) -> DescentStep {
    let x = actions.point(index).to_vec();
    let z_next = block_move(z, &x, u, beta);
    DescentStep { index, x, z_next }
}

/// Result of [`slow_variation_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlowVariation {
    pub ok: bool,
    pub worst_gap: f64,
    pub witness: Vec<f64>,
}

/// Sampled check of `|F_{k+1}(z) − F_k(z)| ≤ bound`.
pub fn slow_variation_check(
    f_k: &dyn Fn(&[f64]) -> f64,
    f_k1: &dyn Fn(&[f64]) -> f64,
    samples: &[Vec<f64>],
    bound: f64,
) -> SlowVariation {
    let (i, worst_gap) =
        samples
            .iter()
            .map(|z| (f_k1(z) - f_k(z)).abs())
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, g)| if g > best.1 { (i, g) } else { best },
            );
    SlowVariation {
        ok: worst_gap <= bound,
        worst_gap: worst_gap.max(0.0),
        witness: samples.get(i).cloned().unwrap_or_default(),
    }
}

/// `count` sample points: vertices of `C` (or `D`) first, then random points of `C`.
pub fn sample_points<R: Rng + ?Sized>(ground: &GroundSet, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = ground.vertices();
    pts.truncate(count);
    while pts.len() < count {
        pts.push(ground.sample(rng));
    }
    pts
}

/// Which step [`run_descent`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DescentEngine {
    #[default]
    Direct,
    FrankWolfe,
}

/// Time-varying objective `F_k`.
pub trait FunctionSequence {
    fn value(&self, k: usize, z: &[f64]) -> f64;

    fn gradient(&self, k: usize, z: &[f64]) -> Vec<f64> {
        crate::inner::finite_difference_gradient(&|w| self.value(k, w), z)
    }
}

/// `F_k = F` for all `k`.
pub struct Static<F>(pub F);

impl<F: Fn(&[f64]) -> f64> FunctionSequence for Static<F> {
    fn value(&self, _k: usize, z: &[f64]) -> f64 {
        (self.0)(z)
    }
}

/// `F_k(z) = f(k, z)`.
pub struct Varying<F>(pub F);

impl<F: Fn(usize, &[f64]) -> f64> FunctionSequence for Varying<F> {
    fn value(&self, k: usize, z: &[f64]) -> f64 {
        (self.0)(k, z)
    }
}

/// Trajectory of [`run_descent`] sampled at covering boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrajectory {
    pub boundaries: Vec<usize>,
    /// `F_k(z_k) − min_C F_k` at each boundary.
    pub gaps: Vec<f64>,
    pub actions: Vec<usize>,
    pub z_final: Vec<f64>,
    /// `(|𝒰| + 1) ε′`
    pub tolerance: f64,
    /// `(|𝒰| + 1) ε′ (1 + γ₁ γ β)`
    pub tolerance_loose: f64,
    pub burn_in: usize,
}

impl DescentTrajectory {
    /// Largest gap after the burn-in, if any boundary is past it.
    pub fn max_gap_after_burn_in(&self) -> Option<f64> {
        let tail = self.gaps.get(self.burn_in..)?;
        (!tail.is_empty()).then(|| tail.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn within_tolerance(&self) -> bool {
        self.max_gap_after_burn_in().is_some_and(|g| g <= self.tolerance)
    }
}

/// Runs `steps` descent steps from `z0` and records the optimality gap at
/// every covering boundary against a reference minimiser over `C`.
pub fn run_descent(
    problem: &ConvexProblem,
    schedule: &UpdateSchedule,
    config: &DescentConfig,
    family: &dyn FunctionSequence,
    engine: DescentEngine,
    z0: &[f64],
    steps: usize,
) -> Result<DescentTrajectory, DescentError> {
    config.validate()?;
    if config.n_cover < schedule.n_cover() {
        return Err(DescentError::Config(format!(
            "configured N = {} is below the schedule's {}",
            config.n_cover,
            schedule.n_cover()
        )));
    }
    let actions = problem.action_set().ok_or(DescentError::NoActions)?;
    let feas = check_u_feasible(actions, schedule.sets());
    if let Some(w) = feas.witness {
        return Err(DescentError::NotUFeasible(w.image));
    }
    let reference = InnerSolver::lenient();
    let region: Region<'_> = problem.ground_set().region();
    let boundaries = schedule.boundaries(steps);
    let mut gaps = Vec::with_capacity(boundaries.len());
    let mut z = z0.to_vec();
    let mut acts = Vec::with_capacity(steps);
    let mut next_b = 0;
    let mut warm = problem.ground_set().center();
    for k in 0..=steps {
        if boundaries.get(next_b) == Some(&k) {
            let f = |w: &[f64]| family.value(k, w);
            let g = |w: &[f64]| family.gradient(k, w);
            let best = reference.minimize(&f, Some(&g), region, &warm)?;
            warm = best.point;
            gaps.push(family.value(k, &z) - best.value);
            next_b += 1;
        }
        if k == steps {
            break;
        }
        let u = schedule.set_at(k);
        let step = match engine {
            DescentEngine::Direct => descent_step_direct(&|w| family.value(k, w), &z, u, actions, config.beta),
            DescentEngine::FrankWolfe => descent_step_fw(&family.gradient(k, &z), &z, u, actions, config.beta),
        };
        acts.push(step.index);
        z = step.z_next;
    }
    let n_sets = schedule.sets().len();
    let tolerance = config.gap_tolerance(n_sets);
    Ok(DescentTrajectory {
        boundaries,
        gaps,
        actions: acts,
        z_final: z,
        tolerance,
        tolerance_loose: tolerance * (1.0 + config.gamma1 * config.gamma * config.beta),
        burn_in: config.effective_burn_in(),
    })
}

/// Descent certificate for one step from `z` along `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCertificate {
    /// `F(z) − F(z_next)`
    pub decrease: f64,
    /// Some `y ∈ D` improves the block value by at least `ε′`.
    pub improving: bool,
    /// `γ β ε′`
    pub required_decrease: f64,
    /// `μ_F β² x̄_D²`
    pub allowed_increase: f64,
}

impl StepCertificate {
    pub fn holds(&self, tol: f64) -> bool {
        if self.improving {
            self.decrease >= self.required_decrease - tol
        } else {
            -self.decrease <= self.allowed_increase + tol
        }
    }
}

/// Checks the descent certificate of a completed step against brute force over `D`.
pub fn certify_step(
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    u: &[usize],
    actions: &ActionSet,
    config: &DescentConfig,
    step: &DescentStep,
) -> StepCertificate {
    let fz = f(z);
    let improving = actions
        .iter()
        .any(|y| f(&block_replace(z, y, u)) <= fz - config.eps_prime);
    StepCertificate {
        decrease: fz - f(&step.z_next),
        improving,
        required_decrease: config.gamma * config.beta * config.eps_prime,
        allowed_increase: config.mu_f * config.beta * config.beta * config.diameter * config.diameter,
    }
}

/// `true` if `x` and `y` pick points with equal linear objective `c`.
pub fn same_linear_value(c: &[f64], x: &[f64], y: &[f64]) -> bool {
    (dot(c, x) - dot(c, y)).abs() <= 1e-12 * (1.0 + dist_inf(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Constraints, ScalarFn};

    fn binary() -> ActionSet {
        ActionSet::new(vec![vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn direct_step_example() {
        let s = descent_step_direct(&|z| z[0] * z[0], &[1.0], &[0], &binary(), 0.5);
        assert_eq!(s.x, vec![0.0]);
        assert_eq!(s.z_next, vec![0.5]);
    }

    #[test]
    fn fw_step_examples() {
        let s = descent_step_fw(&[2.0], &[1.0], &[0], &binary(), 0.5);
        assert_eq!(s.index, 0);
        let sq = ActionSet::integer_grid(2, 0, 1).unwrap();
        let s = descent_step_fw(&[0.0, 0.0], &[0.5, 0.5], &[0, 1], &sq, 0.1);
        assert_eq!(s.index, 0);
        let s = descent_step_fw(&[-2.0, 2.0], &[0.0, 1.0], &[0, 1], &sq, 0.1);
        assert_eq!(s.x, vec![1.0, 0.0]);
    }

    #[test]
    fn near_optimal_step_backslides_little() {
        let c = DescentConfig::at_cap(0.1, 0.5, 1, 1.0, 1.0).unwrap();
        let d = ActionSet::new(vec![vec![0.0], vec![1.0], vec![-1.0]]).unwrap();
        let f = |z: &[f64]| z[0] * z[0];
        let s = descent_step_direct(&f, &[0.0], &[0], &d, c.beta);
        let cert = certify_step(&f, &[0.0], &[0], &d, &c, &s);
        assert!(!cert.improving && cert.holds(1e-15));
    }

    #[test]
    fn schedules() {
        let s = make_schedule(2, &[vec![0], vec![1]], SchedulePolicy::Cyclic).unwrap();
        assert_eq!(s.n_cover(), 2);
        let seq: Vec<&[usize]> = (0..4).map(|k| s.set_at(k)).collect();
        assert_eq!(seq, vec![&[0][..], &[1], &[0], &[1]]);
        assert_eq!(s.boundaries(6), vec![0, 2, 4, 6]);

        let s = make_schedule(3, &[vec![0, 1, 2]], SchedulePolicy::Full).unwrap();
        assert_eq!(s.n_cover(), 1);

        let singles: Vec<Vec<usize>> = (0..4).map(|i| vec![i]).collect();
        assert_eq!(make_schedule(4, &singles, SchedulePolicy::Cyclic).unwrap().n_cover(), 4);
        assert!(make_schedule(4, &singles, SchedulePolicy::Full).is_err());
        assert!(make_schedule(2, &[vec![0]], SchedulePolicy::Cyclic).is_err());

        let mixed = vec![vec![0], vec![1], vec![0, 1]];
        let s = make_schedule(2, &mixed, SchedulePolicy::Custom(vec![0, 2, 1])).unwrap();
        assert_eq!(s.n_cover(), 2);
        assert!(make_schedule(2, &mixed, SchedulePolicy::Custom(vec![0, 0])).is_err());
    }

    #[test]
    fn config_enforces_step_cap() {
        let mut c = DescentConfig::at_cap(0.1, 0.5, 1, 2.0, 1.0).unwrap();
        assert!((c.beta - 0.5 * 0.5 * 0.05).abs() < 1e-15);
        c.beta *= 1.5;
        assert!(matches!(c.validate(), Err(DescentError::Config(_))));
        let mut c = DescentConfig::at_cap(0.1, 0.5, 1, 2.0, 1.0).unwrap();
        c.gamma1 = 0.3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn slow_variation_examples() {
        let pts = vec![vec![0.0], vec![0.5], vec![1.0]];
        let f = |z: &[f64]| z[0] * z[0];
        let r = slow_variation_check(&f, &f, &pts, 1e-3);
        assert!(r.ok && r.worst_gap == 0.0);
        let g = |z: &[f64]| z[0] * z[0] + 2e-3 * z[0];
        let r = slow_variation_check(&f, &g, &pts, 1e-3);
        assert!(!r.ok);
        assert_eq!(r.witness, vec![1.0]);
    }

    #[test]
    fn alpha_rule_bounds_lagrangian_variation() {
        let c = DescentConfig::at_cap(0.2, 0.5, 2, 1.0, 2.0_f64.sqrt()).unwrap();
        // g(z) = (1 − z1, z1 − z2) on [0,1]²: ‖g‖₂ ≤ √2.
        let g = |z: &[f64]| [1.0 - z[0], z[0] - z[1]];
        let alpha = c.lagrangian_alpha_cap(2.0_f64.sqrt());
        let lam0 = [0.7, 0.2];
        let lam1 = [lam0[0] + alpha, (lam0[1] - alpha).max(0.0)];
        let lag = |l: [f64; 2]| move |z: &[f64]| z[0] + z[1] + l[0] * g(z)[0] + l[1] * g(z)[1];
        let pts = sample_points(
            &GroundSet::new_box(vec![0.0; 2], vec![1.0; 2]).unwrap(),
            64,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7),
        );
        assert!(slow_variation_check(&lag(lam0), &lag(lam1), &pts, c.slow_variation_bound()).ok);
    }

    #[test]
    fn static_quadratic_converges_within_tolerance() {
        let d = ActionSet::integer_grid(2, -1, 1).unwrap();
        let problem = ConvexProblem::new(
            ScalarFn::new(|z| z[0] * z[0] + z[1] * z[1]),
            Constraints::linear(vec![vec![0.0, 0.0]], vec![1.0]),
            GroundSet::new_box(vec![-1.0; 2], vec![1.0; 2]).unwrap(),
        )
        .unwrap()
        .with_actions(d.clone())
        .unwrap();
        let sched = make_schedule(2, &[vec![0, 1]], SchedulePolicy::Full).unwrap();
        let mut cfg = DescentConfig::at_cap(0.05, 0.5, 1, 1.0, d.diameter()).unwrap();
        cfg.burn_in = Some(2500);
        for engine in [DescentEngine::Direct, DescentEngine::FrankWolfe] {
            let tr = run_descent(
                &problem,
                &sched,
                &cfg,
                &Static(|z: &[f64]| z[0] * z[0] + z[1] * z[1]),
                engine,
                &[1.0, -1.0],
                3000,
            )
            .unwrap();
            assert!(tr.within_tolerance(), "{engine:?} {:?}", tr.max_gap_after_burn_in());
        }
    }
}
