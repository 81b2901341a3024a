//! Named solvers built from a descent rule, a multiplier source and a
//! constraint update, plus the approximation window on running averages.

use crate::descent::{
    descent_step_direct, descent_step_fw, make_schedule, DescentConfig, DescentError, SchedulePolicy, UpdateSchedule,
};
use crate::inner::{InnerError, InnerSolver};
use crate::problem::{
    constraint_bound, ActionSet, ConstraintBound, ConvexProblem, GroundSet, ProblemError, SlaterCertificate,
};
use crate::queue::{queue_update, MultiplierState, QueueError};
use crate::tracker::{BlockTracker, SelectionRule, Tracker, TrackerError};
use crate::vecops::{argmin_tied, dist_inf, dot, mat_vec, norm2, norm_inf, sub};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Descent(#[from] DescentError),
    #[error(transparent)]
    Inner(#[from] InnerError),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("condition violated: {0}")]
    Condition(String),
    #[error("invalid arrivals: {0}")]
    Arrivals(String),
    #[error("invalid randomised action map: {0}")]
    ActionMap(String),
}

/// How `z_k` is obtained from the multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentKind {
    /// `z ∈ argmin_C L(·, μ)` (per block when separable).
    ExactArgmin,
    /// `y ∈ argmin_D ∂L(z, μ)ᵀ U_u x`, `z ← z + β U_u(y − z)`.
    FrankWolfe,
    /// `y ∈ argmin_D L(z + β U_u(x − z), μ)`, `z ← z + β U_u(y − z)`.
    DirectActionSet,
}

/// Where the approximate multiplier comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierSource {
    /// `μ = λ`.
    Exact,
    /// Blocks keep the exact multiplier from their last update.
    StaleBlockwise,
    /// Scaled queue fed by the descent actions of a running average.
    RunningAverageQueue,
    /// Scaled queue fed by actions that track `z_k`.
    TrackedActionQueue,
}

/// Increment used by queue-based multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintUpdate {
    /// `A x_k − b_k`
    Linear,
    /// User-supplied `g_k(x_k)`.
    NonlinearSampled,
    /// `g(z_k) + ∂g(z_k)(x_k − z_k)`
    NonlinearLinearized,
}

/// Per-step sampled constraint `g_k`.
pub type SampledConstraint = Arc<dyn Fn(usize, &[f64]) -> Vec<f64> + Send + Sync>;

/// How the queue sees the right-hand side `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalModel {
    /// `b_k = b`
    Mean,
    /// Integer-valued dithering of `b`, prefix deviation at most 1/2.
    Dither,
    /// `⌊b⌋ + Bernoulli(b − ⌊b⌋)` with a declared deviation cap.
    Bernoulli { sigma2: f64 },
}

/// Random per-step information delays, uniform on `{0, …, τ̄}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayModel {
    pub tau_bar: usize,
    /// `owner[i] = Some(b)`: block `b` sees constraint `i` without delay.
    pub owner: Vec<Option<usize>>,
}

/// Named solver configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    ExactDual,
    UnsyncDual,
    FwDual,
    MaxWeight,
    DualMaxWeight,
    DiscreteDual,
    UnsyncDiscreteDual,
    UnsyncMaxWeight,
    UnsyncDualMaxWeight,
    Custom,
}

impl fmt::Display for PresetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PresetKind::ExactDual => "exact_dual",
            PresetKind::UnsyncDual => "unsync_dual",
            PresetKind::FwDual => "fw_dual",
            PresetKind::MaxWeight => "max_weight",
            PresetKind::DualMaxWeight => "dual_max_weight",
            PresetKind::DiscreteDual => "discrete_dual",
            PresetKind::UnsyncDiscreteDual => "unsync_discrete_dual",
            PresetKind::UnsyncMaxWeight => "unsync_max_weight",
            PresetKind::UnsyncDualMaxWeight => "unsync_dual_max_weight",
            PresetKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PresetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "exact_dual" => PresetKind::ExactDual,
            "unsync_dual" => PresetKind::UnsyncDual,
            "fw_dual" => PresetKind::FwDual,
            "max_weight" => PresetKind::MaxWeight,
            "dual_max_weight" => PresetKind::DualMaxWeight,
            "discrete_dual" => PresetKind::DiscreteDual,
            "unsync_discrete_dual" => PresetKind::UnsyncDiscreteDual,
            "unsync_max_weight" => PresetKind::UnsyncMaxWeight,
            "unsync_dual_max_weight" => PresetKind::UnsyncDualMaxWeight,
            other => return Err(format!("unknown preset `{other}`")),
        })
    }
}

/// Descent rule + multiplier source + constraint update, with step sizes.
#[derive(Clone)]
pub struct SolverPreset {
    pub kind: PresetKind,
    pub descent: DescentKind,
    pub source: MultiplierSource,
    pub update: ConstraintUpdate,
    pub alpha: f64,
    pub beta: f64,
    pub clip: Option<f64>,
    pub schedule: SchedulePolicy,
    pub delay: Option<DelayModel>,
    pub arrivals: ArrivalModel,
    pub rule: SelectionRule,
    pub s_bar: f64,
    /// Evaluate max-weight as `argmax (∂U − α Qᵀ A) x` on the raw queue.
    pub stolyar_form: bool,
    /// Declared `σ₀`; required for sampled nonlinear updates.
    pub sigma0: Option<f64>,
    pub sampled: Option<SampledConstraint>,
    pub lambda1: Option<Vec<f64>>,
    pub z1: Option<Vec<f64>>,
    /// When set, `β` and `α` are checked against the step-size and
    /// slow-variation rules with tolerance `ε′` and safety factor `γ`.
    pub eps_prime: Option<f64>,
    pub gamma: f64,
    /// Slow-variation factor `γ₁`; `γ/4` when unset.
    pub gamma1: Option<f64>,
    pub seed: u64,
    pub inner: InnerSolver,
}

impl fmt::Debug for SolverPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolverPreset")
            .field("kind", &self.kind)
            .field("descent", &self.descent)
            .field("source", &self.source)
            .field("update", &self.update)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("clip", &self.clip)
            .field("schedule", &self.schedule)
            .field("delay", &self.delay)
            .field("arrivals", &self.arrivals)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl SolverPreset {
    fn base(kind: PresetKind, descent: DescentKind, source: MultiplierSource, alpha: f64, beta: f64) -> Self {
        let unsync = matches!(
            kind,
            PresetKind::UnsyncDual
                | PresetKind::UnsyncDiscreteDual
                | PresetKind::UnsyncMaxWeight
                | PresetKind::UnsyncDualMaxWeight
        );
        Self {
            kind,
            descent,
            source,
            update: ConstraintUpdate::Linear,
            alpha,
            beta,
            clip: None,
            schedule: if unsync {
                SchedulePolicy::Cyclic
            } else {
                SchedulePolicy::Full
            },
            delay: None,
            arrivals: ArrivalModel::Mean,
            rule: SelectionRule::default(),
            s_bar: 1.0,
            stolyar_form: false,
            sigma0: None,
            sampled: None,
            lambda1: None,
            z1: None,
            eps_prime: None,
            gamma: 0.5,
            gamma1: None,
            seed: 0,
            inner: InnerSolver::lenient(),
        }
    }

    /// `z_k ∈ argmin_C L(z, λ_k)`, `λ_{k+1} = [λ_k + α g(z_k)]⁺`.
    pub fn exact_dual(alpha: f64) -> Self {
        Self::base(
            PresetKind::ExactDual,
            DescentKind::ExactArgmin,
            MultiplierSource::Exact,
            alpha,
            0.5,
        )
    }

    /// Blockwise argmin with the multiplier from each block's last update.
    pub fn unsync_dual(alpha: f64) -> Self {
        Self::base(
            PresetKind::UnsyncDual,
            DescentKind::ExactArgmin,
            MultiplierSource::StaleBlockwise,
            alpha,
            0.5,
        )
    }

    /// Frank-Wolfe on `L(·, λ_k)` with `λ_{k+1} = [λ_k + α g(z_{k+1})]^{[0,λ̄]}`.
    pub fn fw_dual(alpha: f64, beta: f64) -> Self {
        Self::base(
            PresetKind::FwDual,
            DescentKind::FrankWolfe,
            MultiplierSource::Exact,
            alpha,
            beta,
        )
    }

    /// Classical max-weight with a running average and scaled queues.
    pub fn max_weight(alpha: f64, beta: f64) -> Self {
        Self::base(
            PresetKind::MaxWeight,
            DescentKind::FrankWolfe,
            MultiplierSource::RunningAverageQueue,
            alpha,
            beta,
        )
    }

    /// `x_k ∈ argmin_D L((1−β) z_k + β x, μ_k)` with scaled queues.
    pub fn dual_max_weight(alpha: f64, beta: f64) -> Self {
        Self::base(
            PresetKind::DualMaxWeight,
            DescentKind::DirectActionSet,
            MultiplierSource::RunningAverageQueue,
            alpha,
            beta,
        )
    }

    /// Argmin decisions, tracked discrete actions, queues fed by the actions.
    pub fn discrete_dual(alpha: f64) -> Self {
        Self::base(
            PresetKind::DiscreteDual,
            DescentKind::ExactArgmin,
            MultiplierSource::TrackedActionQueue,
            alpha,
            0.5,
        )
    }

    /// Blockwise [`Self::discrete_dual`].
    pub fn unsync_discrete_dual(alpha: f64) -> Self {
        Self::base(
            PresetKind::UnsyncDiscreteDual,
            DescentKind::ExactArgmin,
            MultiplierSource::TrackedActionQueue,
            alpha,
            0.5,
        )
    }

    /// Blockwise Frank-Wolfe steps, tracked actions, scaled queues.
    pub fn unsync_max_weight(alpha: f64, beta: f64) -> Self {
        Self::base(
            PresetKind::UnsyncMaxWeight,
            DescentKind::FrankWolfe,
            MultiplierSource::TrackedActionQueue,
            alpha,
            beta,
        )
    }

    /// Blockwise direct steps, tracked actions, scaled queues.
    pub fn unsync_dual_max_weight(alpha: f64, beta: f64) -> Self {
        Self::base(
            PresetKind::UnsyncDualMaxWeight,
            DescentKind::DirectActionSet,
            MultiplierSource::TrackedActionQueue,
            alpha,
            beta,
        )
    }

    pub fn custom(descent: DescentKind, source: MultiplierSource, alpha: f64, beta: f64) -> Self {
        Self::base(PresetKind::Custom, descent, source, alpha, beta)
    }

    pub fn from_kind(kind: PresetKind, alpha: f64, beta: f64) -> Self {
        match kind {
            PresetKind::ExactDual => Self::exact_dual(alpha),
            PresetKind::UnsyncDual => Self::unsync_dual(alpha),
            PresetKind::FwDual => Self::fw_dual(alpha, beta),
            PresetKind::MaxWeight => Self::max_weight(alpha, beta),
            PresetKind::DualMaxWeight => Self::dual_max_weight(alpha, beta),
            PresetKind::DiscreteDual => Self::discrete_dual(alpha),
            PresetKind::UnsyncDiscreteDual => Self::unsync_discrete_dual(alpha),
            PresetKind::UnsyncMaxWeight => Self::unsync_max_weight(alpha, beta),
            PresetKind::UnsyncDualMaxWeight => Self::unsync_dual_max_weight(alpha, beta),
            PresetKind::Custom => Self::custom(DescentKind::ExactArgmin, MultiplierSource::Exact, alpha, beta),
        }
    }

    pub fn with_update(mut self, update: ConstraintUpdate) -> Self {
        self.update = update;
        self
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = Some(clip);
        self
    }

    pub fn with_schedule(mut self, policy: SchedulePolicy) -> Self {
        self.schedule = policy;
        self
    }

    pub fn with_delay(mut self, delay: DelayModel) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn with_arrivals(mut self, arrivals: ArrivalModel) -> Self {
        self.arrivals = arrivals;
        self
    }

    pub fn with_rule(mut self, rule: SelectionRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_floor(mut self, s_bar: f64) -> Self {
        self.s_bar = s_bar;
        self
    }

    pub fn with_stolyar_form(mut self, on: bool) -> Self {
        self.stolyar_form = on;
        self
    }

    pub fn with_sigma0(mut self, sigma0: f64) -> Self {
        self.sigma0 = Some(sigma0);
        self
    }

    pub fn with_sampled(mut self, g: impl Fn(usize, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.sampled = Some(Arc::new(g));
        self
    }

    pub fn with_initial_multiplier(mut self, lambda1: Vec<f64>) -> Self {
        self.lambda1 = Some(lambda1);
        self
    }

    pub fn with_initial_point(mut self, z1: Vec<f64>) -> Self {
        self.z1 = Some(z1);
        self
    }

    pub fn with_descent_tolerance(mut self, eps_prime: f64, gamma: f64) -> Self {
        self.eps_prime = Some(eps_prime);
        self.gamma = gamma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn uses_queue(&self) -> bool {
        matches!(
            self.source,
            MultiplierSource::RunningAverageQueue | MultiplierSource::TrackedActionQueue
        )
    }
}

/// `(lower, upper)` bounds on `f(z⋄_k) − f*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lower: f64,
    pub upper: f64,
}

impl Window {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Approximation window at step `k`; `None` gives the `k → ∞` form.
pub fn theorem3_window(
    k: Option<usize>,
    alpha: f64,
    eps: f64,
    sigma0: f64,
    g_bar: f64,
    lambda_bar: f64,
    m: usize,
) -> Window {
    let m = m as f64;
    let (lo_t, hi_t) = match k {
        Some(k) => {
            let ak = alpha * k.max(1) as f64;
            (
                2.0 * m * lambda_bar * lambda_bar / ak,
                1.5 * m * lambda_bar * lambda_bar / ak,
            )
        }
        None => (0.0, 0.0),
    };
    Window {
        lower: -lo_t - alpha * m * (g_bar * g_bar / 2.0 + sigma0 * (1.0 + g_bar)) - eps,
        upper: eps + alpha * m * (g_bar * g_bar + sigma0 * (1.0 + g_bar)) + hi_t,
    }
}

/// Level-set slack `δ = α m² (ḡ²/2 + σ₀ ḡ) + ε`.
pub fn level_set_slack(alpha: f64, m: usize, g_bar: f64, sigma0: f64, eps: f64) -> f64 {
    let m = m as f64;
    alpha * m * m * (g_bar * g_bar / 2.0 + sigma0 * g_bar) + eps
}

/// `λ̄ = 2𝒬 + max{‖λ₁‖₂, 𝒬 + α m ḡ}` with `𝒬` taken at [`level_set_slack`].
#[allow(clippy::too_many_arguments)]
pub fn bounded_multiplier_radius(
    cert: &SlaterCertificate,
    f_star: f64,
    alpha: f64,
    m: usize,
    g_bar: f64,
    sigma0: f64,
    eps: f64,
    lambda1_norm: f64,
) -> Result<f64, SolverError> {
    let delta = level_set_slack(alpha, m, g_bar, sigma0, eps);
    let q = crate::problem::slater_dual_bound(cert, f_star, delta)?;
    Ok(2.0 * q + lambda1_norm.max(q + alpha * m as f64 * g_bar))
}

/// Kind of a `{0,1}` arrival stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalKind {
    DeterministicDither,
    BernoulliLogged,
}

/// A `{0,1}` arrival stream with mean `b`.
#[derive(Debug, Clone)]
pub struct Arrivals {
    mean: f64,
    sigma2: f64,
    kind: ArrivalKind,
    rng: ChaCha8Rng,
    emitted: f64,
    k: usize,
    max_deviation: f64,
}

impl Arrivals {
    /// Largest `|Σ_{i≤k}(b_i − b)|` so far.
    pub fn max_deviation(&self) -> f64 {
        self.max_deviation
    }

    /// `true` while the realised deviation respects `σ₂`.
    pub fn within_cap(&self) -> bool {
        self.max_deviation <= self.sigma2 + 1e-12
    }
}

impl Iterator for Arrivals {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        self.k += 1;
        let v = match self.kind {
            ArrivalKind::DeterministicDither => {
                if self.mean * self.k as f64 - self.emitted >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            ArrivalKind::BernoulliLogged => f64::from(u8::from(self.rng.random::<f64>() < self.mean)),
        };
        self.emitted += v;
        let dev = (self.emitted - self.mean * self.k as f64).abs();
        if dev > self.max_deviation {
            self.max_deviation = dev;
            if !self.within_cap() {
                log::debug!(
                    "arrival deviation {dev:.3} exceeds σ₂ = {} at step {}",
                    self.sigma2,
                    self.k
                );
            }
        }
        Some(v)
    }
}

/// `{0,1}` arrivals with mean `b` and prefix deviation cap `σ₂`.
pub fn stochastic_arrivals(mean: f64, sigma2: f64, kind: ArrivalKind, seed: u64) -> Result<Arrivals, SolverError> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(SolverError::Arrivals(format!("mean {mean} is outside [0, 1]")));
    }
    if !(sigma2 > 0.0) {
        return Err(SolverError::Arrivals(format!("σ₂ = {sigma2} must be positive")));
    }
    let fractional = mean > 0.0 && mean < 1.0;
    if kind == ArrivalKind::DeterministicDither && fractional && sigma2 < 0.5 {
        return Err(SolverError::Arrivals(format!(
            "dithering {mean} needs σ₂ ≥ 1/2, got {sigma2}"
        )));
    }
    Ok(Arrivals {
        mean,
        sigma2,
        kind,
        rng: ChaCha8Rng::seed_from_u64(seed),
        emitted: 0.0,
        k: 0,
        max_deviation: 0.0,
    })
}

/// Vector arrival process `b_k` for the queue increments `A x − b_k`.
#[derive(Debug, Clone)]
struct ArrivalProcess {
    mean: Vec<f64>,
    model: ArrivalModel,
    emitted: Vec<f64>,
    k: usize,
    max_deviation: f64,
}

impl ArrivalProcess {
    fn new(mean: Vec<f64>, model: ArrivalModel) -> Self {
        let m = mean.len();
        Self {
            mean,
            model,
            emitted: vec![0.0; m],
            k: 0,
            max_deviation: 0.0,
        }
    }

    fn sigma2(&self) -> f64 {
        match self.model {
            ArrivalModel::Mean => 0.0,
            ArrivalModel::Dither => {
                if self.mean.iter().all(|b| b.fract() == 0.0) {
                    0.0
                } else {
                    0.5
                }
            }
            ArrivalModel::Bernoulli { sigma2 } => sigma2,
        }
    }

    /// Largest `|b_k − b|` the model can produce.
    fn jump(&self) -> f64 {
        match self.model {
            ArrivalModel::Mean => 0.0,
            _ => 1.0,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.k += 1;
        let k = self.k as f64;
        let out: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.emitted)
            .map(|(&b, &e)| match self.model {
                ArrivalModel::Mean => b,
                ArrivalModel::Dither => {
                    let s = b.signum();
                    s * (b.abs() * k - s * e + 0.5).floor()
                }
                ArrivalModel::Bernoulli { .. } => {
                    let base = b.floor();
                    base + f64::from(u8::from(rng.random::<f64>() < b - base))
                }
            })
            .collect();
        for ((e, v), b) in self.emitted.iter_mut().zip(&out).zip(&self.mean) {
            *e += v;
            self.max_deviation = self.max_deviation.max((*e - b * k).abs());
        }
        out
    }
}

/// Effective actions `ȳ(x_j) = Σ_l p_{jl} x_l` for randomised action outcomes.
pub fn randomized_action_map(actions: &ActionSet, p: &[Vec<f64>]) -> Result<ActionSet, SolverError> {
    let d = actions.len();
    if p.len() != d || p.iter().any(|r| r.len() != d) {
        return Err(SolverError::ActionMap(format!("expected a {d}×{d} matrix")));
    }
    for (j, row) in p.iter().enumerate() {
        if row.iter().any(|v| !(*v >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SolverError::ActionMap(format!("row {j} is not a probability vector")));
        }
    }
    let n = actions.dim();
    let pts = p
        .iter()
        .map(|row| {
            (0..n)
                .map(|i| row.iter().zip(actions.iter()).map(|(w, x)| w * x[i]).sum())
                .collect()
        })
        .collect();
    Ok(ActionSet::new(pts)?)
}

/// Known optimum and Slater point, enabling the window columns.
#[derive(Debug, Clone)]
pub struct BoundContext {
    pub f_star: f64,
    pub slater: SlaterCertificate,
}

/// One solver step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// One-based step index.
    pub k: usize,
    pub z: Vec<f64>,
    pub x: Option<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub q_scaled: Vec<f64>,
    pub f_avg: f64,
    pub g_violation_max: f64,
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    /// Largest `‖λ_k − μ^u_k‖_∞` over blocks.
    pub gap: f64,
    /// Certified suboptimality `L(z_k, μ_k) − q(μ_k)` (Frank-Wolfe gap).
    pub eps: f64,
}

/// Full run output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub preset: PresetKind,
    pub seed: u64,
    pub alpha: f64,
    pub steps: Vec<StepRecord>,
    pub z_avg: Vec<f64>,
    pub x_avg: Option<Vec<f64>>,
    pub lambda_avg: Vec<f64>,
    pub mu_avg: Vec<f64>,
    pub sigma0: f64,
    pub g_bar_inf: f64,
    pub g_bar_l2: f64,
    /// Largest `‖λ_k − μ_k‖_∞ / α`.
    pub max_scaled_gap: f64,
    pub certificate_violations: usize,
    pub eps_max: f64,
    pub f_star: Option<f64>,
    pub lambda_bar: Option<f64>,
    pub multiplier_bound_violations: usize,
    pub checkpoints: Vec<usize>,
    /// Checkpoints after burn-in where `f(z⋄) − f*` left the window.
    pub window_violations: usize,
    /// Same, using `ḡ = max ‖g‖_∞` instead of the looser `‖g‖₂` bound.
    pub window_violations_inf: usize,
    pub tracker_bound: Option<f64>,
    pub tracker_max_deviation: Option<f64>,
    pub arrival_max_deviation: f64,
    pub action_indices: Vec<usize>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn f_avg(&self) -> Option<f64> {
        self.last().map(|s| s.f_avg)
    }

    pub fn burn_in(&self) -> usize {
        self.steps.len() / 10
    }
}

/// Block layout: coordinate sets whose argmin/FW step uses one multiplier.
fn blocks_of(problem: &ConvexProblem) -> Vec<Vec<usize>> {
    match problem.separability() {
        Some(sep) => sep.blocks().iter().map(|b| b.coords.clone()).collect(),
        None => vec![(0..problem.n()).collect()],
    }
}

fn update_sets_of(problem: &ConvexProblem) -> Vec<Vec<usize>> {
    match problem.separability() {
        Some(sep) => sep.update_sets().to_vec(),
        None => vec![(0..problem.n()).collect()],
    }
}

/// Longest run of steps a block waits between updates, minus one.
fn max_staleness(schedule: &UpdateSchedule, blocks: &[Vec<usize>]) -> usize {
    let p = schedule.pattern().len();
    let mut worst = 0;
    for b in blocks {
        let hits: Vec<usize> = (0..p)
            .filter(|&k| b.iter().all(|c| schedule.set_at(k).contains(c)))
            .collect();
        if hits.is_empty() {
            return usize::MAX;
        }
        for (i, &h) in hits.iter().enumerate() {
            let next = if i + 1 < hits.len() { hits[i + 1] } else { hits[0] + p };
            worst = worst.max(next - h - 1);
        }
    }
    worst
}

enum Rounder {
    Single(Tracker),
    Blocks(BlockTracker),
}

impl Rounder {
    fn track(&mut self, z: &[f64]) -> Result<(usize, Vec<f64>), TrackerError> {
        match self {
            Rounder::Single(t) => {
                let j = t.track(z)?;
                Ok((j, t.actions().point(j).to_vec()))
            }
            Rounder::Blocks(t) => {
                let x = t.track(z)?;
                Ok((usize::MAX, x))
            }
        }
    }

    fn bound(&self) -> f64 {
        match self {
            Rounder::Single(t) => t.deviation_bound(),
            Rounder::Blocks(t) => t.deviation_bound(),
        }
    }

    fn max_deviation(&self) -> f64 {
        match self {
            Rounder::Single(t) => t.max_deviation(),
            Rounder::Blocks(t) => t.max_deviation(),
        }
    }
}

/// Constants fixed before the run starts.
struct Setup {
    sigma0: f64,
    bound: ConstraintBound,
    tracker_bound: Option<f64>,
}

fn induced_inf_norm(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Declared certificate `σ₀` for the preset on `problem`.
fn declared_sigma0(
    problem: &ConvexProblem,
    preset: &SolverPreset,
    bound: &ConstraintBound,
    schedule: &UpdateSchedule,
    tracker_bound: Option<f64>,
    arrivals: &ArrivalProcess,
) -> Result<f64, SolverError> {
    let m = problem.m() as f64;
    let vertices = match problem.action_set() {
        Some(d) => d.points().to_vec(),
        None => problem.ground_set().vertices(),
    };
    let sigma2 = arrivals.sigma2();
    let queue_term;
    let step_change;
    match preset.source {
        MultiplierSource::Exact | MultiplierSource::StaleBlockwise => {
            queue_term = 0.0;
            step_change = bound.inf;
        }
        MultiplierSource::RunningAverageQueue | MultiplierSource::TrackedActionQueue => match preset.update {
            ConstraintUpdate::NonlinearSampled => {
                return preset
                    .sigma0
                    .ok_or_else(|| SolverError::Unsupported("sampled nonlinear updates need a declared σ₀".into()));
            }
            ConstraintUpdate::Linear => {
                let (a, b) = problem
                    .constraints()
                    .as_linear()
                    .ok_or_else(|| SolverError::Unsupported("linear queue update on nonlinear constraints".into()))?;
                let az_max = vertices.iter().map(|x| norm_inf(&mat_vec(a, x))).fold(0.0, f64::max);
                queue_term = if preset.source == MultiplierSource::RunningAverageQueue {
                    2.0 * m * (2.0 * az_max / preset.beta + sigma2)
                } else {
                    let s3 = tracker_bound.expect("tracked source has a tracker");
                    2.0 * m * (induced_inf_norm(a) * s3 + sigma2)
                };
                step_change = vertices
                    .iter()
                    .map(|x| norm_inf(&sub(&mat_vec(a, x), b)))
                    .fold(0.0, f64::max)
                    + arrivals.jump();
            }
            ConstraintUpdate::NonlinearLinearized => {
                let s3 = tracker_bound
                    .ok_or_else(|| SolverError::Unsupported("linearised updates need tracked actions".into()))?;
                queue_term = m * (bound.inf + 2.0 * s3 * bound.jacobian);
                let spread = vertices
                    .iter()
                    .flat_map(|x| vertices.iter().map(move |y| dist_inf(x, y)))
                    .fold(0.0, f64::max);
                step_change = bound.inf + bound.jacobian * spread;
            }
        },
    }
    let stale = if preset.descent == DescentKind::ExactArgmin {
        max_staleness(schedule, &blocks_of(problem))
    } else {
        0
    };
    if stale == usize::MAX {
        return Err(SolverError::Unsupported("a block is never updated on its own".into()));
    }
    let delay = preset.delay.as_ref().map_or(0, |d| d.tau_bar);
    let computed = queue_term + (stale + delay) as f64 * step_change;
    Ok(preset.sigma0.unwrap_or(computed))
}

fn validate(problem: &ConvexProblem, preset: &SolverPreset) -> Result<(), SolverError> {
    if !(preset.alpha > 0.0 && preset.alpha.is_finite()) {
        return Err(SolverError::Condition(format!("α = {} must be positive", preset.alpha)));
    }
    if preset.descent != DescentKind::ExactArgmin && !(preset.beta > 0.0 && preset.beta < 1.0) {
        return Err(SolverError::Condition(format!("β = {} is outside (0, 1)", preset.beta)));
    }
    if preset.descent == DescentKind::DirectActionSet && problem.action_set().is_none() {
        return Err(SolverError::Unsupported("direct action-set descent needs D".into()));
    }
    if preset.source == MultiplierSource::RunningAverageQueue {
        if preset.descent == DescentKind::ExactArgmin {
            return Err(SolverError::Unsupported(
                "a running average needs descent actions".into(),
            ));
        }
        if problem.action_set().is_none() {
            return Err(SolverError::Unsupported("running-average queues need D".into()));
        }
        if preset.schedule != SchedulePolicy::Full {
            return Err(SolverError::Unsupported(
                "running-average certificates need synchronised updates".into(),
            ));
        }
    }
    if preset.source == MultiplierSource::TrackedActionQueue && problem.action_set().is_none() {
        return Err(SolverError::Unsupported("tracked actions need D".into()));
    }
    if preset.source == MultiplierSource::StaleBlockwise && preset.descent != DescentKind::ExactArgmin {
        return Err(SolverError::Unsupported(
            "stale multipliers pair with blockwise argmin".into(),
        ));
    }
    if preset.update == ConstraintUpdate::NonlinearSampled && preset.sampled.is_none() {
        return Err(SolverError::Unsupported("sampled update without a sampler".into()));
    }
    if preset.stolyar_form
        && !(preset.descent == DescentKind::FrankWolfe
            && preset.source == MultiplierSource::RunningAverageQueue
            && preset.update == ConstraintUpdate::Linear)
    {
        return Err(SolverError::Unsupported(
            "the argmax form applies to classical max-weight".into(),
        ));
    }
    if let Some(d) = &preset.delay {
        if d.owner.len() != problem.m() {
            return Err(SolverError::Condition(format!(
                "delay owner list has {} entries for {} constraints",
                d.owner.len(),
                problem.m()
            )));
        }
    }
    if let Some(c) = preset.clip {
        if !(c > 0.0) {
            return Err(SolverError::Condition(format!("clip λ̄ = {c} must be positive")));
        }
    }
    Ok(())
}

/// Checks the step-size cap and the slow-variation rule for descent presets.
fn check_descent_conditions(
    problem: &ConvexProblem,
    preset: &SolverPreset,
    schedule: &UpdateSchedule,
    bound: &ConstraintBound,
) -> Result<(), SolverError> {
    let (Some(eps_prime), DescentKind::FrankWolfe | DescentKind::DirectActionSet) = (preset.eps_prime, preset.descent)
    else {
        return Ok(());
    };
    let curvature = problem
        .curvature()
        .ok_or_else(|| SolverError::Condition("step-size rule needs curvature constants".into()))?;
    let mu_f = curvature.lagrangian(preset.clip);
    if !mu_f.is_finite() {
        return Err(SolverError::Condition(
            "nonlinear constraints need a clip λ̄ for bounded curvature".into(),
        ));
    }
    let diameter = problem.action_set().map_or(0.0, ActionSet::diameter);
    let cfg = DescentConfig {
        beta: preset.beta,
        eps_prime,
        gamma: preset.gamma,
        gamma1: preset.gamma1.unwrap_or(preset.gamma / 4.0),
        n_cover: schedule.n_cover(),
        mu_f,
        diameter,
        burn_in: None,
    };
    cfg.validate()
        .map_err(|e| SolverError::Condition(format!("β ≤ (1−γ)γ·min{{ε′/(N μ_F x̄²), 1}}: {e}")))?;
    let cap = cfg.lagrangian_alpha_cap(bound.l2);
    if preset.alpha > cap {
        return Err(SolverError::Condition(format!(
            "α ≤ γ₁γβε′/(2N ḡ₂²) = {cap:.6e} is violated by α = {}",
            preset.alpha
        )));
    }
    Ok(())
}

/// Gradient of `L(·, μ^b)` restricted to each block's coordinates.
fn blockwise_gradient(problem: &ConvexProblem, z: &[f64], blocks: &[Vec<usize>], mus: &[Vec<f64>]) -> Vec<f64> {
    let mut g = vec![0.0; z.len()];
    let mut cache: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (b, mu) in blocks.iter().zip(mus) {
        let full = match cache.iter().find(|(m, _)| m == mu) {
            Some((_, v)) => v.clone(),
            None => {
                let v = problem.lagrangian_gradient(z, mu);
                cache.push((mu.clone(), v.clone()));
                v
            }
        };
        for &c in b {
            g[c] = full[c];
        }
    }
    g
}

/// Frank-Wolfe gap of `L(·, μ^b)` at `z`, an upper bound on `L − q`.
fn fw_gap(problem: &ConvexProblem, z: &[f64], blocks: &[Vec<usize>], mus: &[Vec<f64>]) -> f64 {
    let g = blockwise_gradient(problem, z, blocks, mus);
    let s = problem.ground_set().region().linear_oracle(&g);
    dot(&g, &sub(z, &s)).max(0.0)
}

/// Runs `steps` iterations of `preset` on `problem`.
pub fn solve(
    problem: &ConvexProblem,
    preset: &SolverPreset,
    steps: usize,
    bounds: Option<&BoundContext>,
) -> Result<Trajectory, SolverError> {
    validate(problem, preset)?;
    let n = problem.n();
    let m = problem.m();
    let blocks = blocks_of(problem);
    let sets = update_sets_of(problem);
    let policy = match (&preset.schedule, sets.len()) {
        (SchedulePolicy::Full, _) if !sets.iter().any(|s| s.len() == n) => {
            return Err(SolverError::Unsupported(
                "synchronised schedule needs the full update set".into(),
            ))
        }
        (p, _) => p.clone(),
    };
    let schedule = make_schedule(n, &sets, policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);
    let bound = constraint_bound(problem, &mut rng, 1000);
    check_descent_conditions(problem, preset, &schedule, &bound)?;

    let mut rounder = if preset.source == MultiplierSource::TrackedActionQueue {
        let d = problem.action_set().expect("validated").clone();
        Some(if blocks.len() > 1 {
            Rounder::Blocks(BlockTracker::new(d, blocks.clone(), preset.rule)?)
        } else {
            Rounder::Single(Tracker::new(d).with_rule(preset.rule).with_floor(preset.s_bar)?)
        })
    } else {
        None
    };
    if let Some(Rounder::Blocks(bt)) = &rounder {
        if preset.s_bar != 1.0 {
            log::warn!(
                "per-block trackers use the minimum drift floor; S̄ = {} ignored",
                preset.s_bar
            );
        }
        let _ = bt;
    }
    let linear_b = problem.constraints().as_linear().map(|(_, b)| b.to_vec());
    let mut arrivals = ArrivalProcess::new(linear_b.clone().unwrap_or_else(|| vec![0.0; m]), preset.arrivals);
    let setup = Setup {
        sigma0: declared_sigma0(
            problem,
            preset,
            &bound,
            &schedule,
            rounder.as_ref().map(Rounder::bound),
            &arrivals,
        )?,
        bound,
        tracker_bound: rounder.as_ref().map(Rounder::bound),
    };
    log::info!(
        "{}: α = {}, β = {}, σ₀ = {:.6}, ḡ∞ = {:.6}, ḡ₂ = {:.6}",
        preset.kind,
        preset.alpha,
        preset.beta,
        setup.sigma0,
        setup.bound.inf,
        setup.bound.l2
    );

    let lambda1 = preset.lambda1.clone().unwrap_or_else(|| vec![0.0; m]);
    let mut state = MultiplierState::with_initial(lambda1.clone(), preset.alpha)?;
    if let Some(c) = preset.clip {
        state = state.with_clip(c);
    }
    let tau_bar = preset.delay.as_ref().map_or(0, |d| d.tau_bar);
    let mut nu_hist: VecDeque<Vec<f64>> = VecDeque::from([state.mu().to_vec()]);
    let mut raw_q: Vec<f64> = state.mu().iter().map(|v| v / preset.alpha).collect();

    let ground = problem.ground_set();
    let mut z = match &preset.z1 {
        Some(z1) => z1.clone(),
        None => ground.center(),
    };
    let solver = preset.inner;
    if preset.descent == DescentKind::ExactArgmin {
        // Initial decision with the initial multiplier, so every block starts optimal.
        let mus: Vec<Vec<f64>> = blocks.iter().map(|_| lambda1.clone()).collect();
        z = exact_blocks(
            problem,
            &solver,
            &z,
            &blocks,
            &mus,
            &(0..blocks.len()).collect::<Vec<_>>(),
        )?;
    }
    let mut stale_mu: Vec<Vec<f64>> = blocks.iter().map(|_| lambda1.clone()).collect();

    let checkpoint_every = steps.div_ceil(100).max(1);
    let burn_in = steps / 10;
    let mut records = Vec::with_capacity(steps);
    let mut z_avg = vec![0.0; n];
    let mut x_avg = vec![0.0; n];
    let mut lambda_avg = vec![0.0; m];
    let mut mu_avg = vec![0.0; m];
    let mut eps_max = 0.0_f64;
    let mut max_gap = 0.0_f64;
    let mut violations = 0;
    let mut mb_violations = 0;
    let mut checkpoints = Vec::new();
    let mut window_violations = 0;
    let mut window_violations_inf = 0;
    let mut lambda_bar_last = None;
    let mut action_indices = Vec::new();
    let lambda1_norm = norm2(&lambda1);

    for k in 1..=steps {
        let lambda_k = state.lambda().to_vec();
        let nu_k = state.mu().to_vec();
        let u = schedule.set_at(k - 1).to_vec();
        let updated: Vec<usize> = (0..blocks.len())
            .filter(|&b| blocks[b].iter().all(|c| u.contains(c)))
            .collect();

        // Per-block multipliers seen by the decision.
        let mut mus: Vec<Vec<f64>> = Vec::with_capacity(blocks.len());
        for b in 0..blocks.len() {
            let base = match preset.source {
                MultiplierSource::StaleBlockwise => {
                    if updated.contains(&b) {
                        stale_mu[b] = lambda_k.clone();
                    }
                    stale_mu[b].clone()
                }
                _ => match &preset.delay {
                    Some(d) => d
                        .owner
                        .iter()
                        .enumerate()
                        .map(|(i, o)| {
                            let tau = if *o == Some(b) {
                                0
                            } else {
                                rng.random_range(0..=d.tau_bar)
                            };
                            nu_hist[tau.min(nu_hist.len() - 1)][i]
                        })
                        .collect(),
                    None => nu_k.clone(),
                },
            };
            mus.push(base);
        }
        if preset.descent == DescentKind::ExactArgmin && preset.source != MultiplierSource::StaleBlockwise {
            for b in 0..blocks.len() {
                if updated.contains(&b) {
                    stale_mu[b] = mus[b].clone();
                }
            }
            mus.clone_from_slice(&stale_mu);
        }
        let gap = mus.iter().map(|mu| dist_inf(&lambda_k, mu)).fold(0.0, f64::max);
        max_gap = max_gap.max(gap);
        if gap > preset.alpha * setup.sigma0 * (1.0 + 1e-9) + 1e-12 {
            violations += 1;
            log::debug!(
                "step {k}: ‖λ − μ‖∞ = {gap:.6e} exceeds α·σ₀ = {:.6e}",
                preset.alpha * setup.sigma0
            );
        }

        // Decision.
        let mut descent_action: Option<(usize, Vec<f64>)> = None;
        match preset.descent {
            DescentKind::ExactArgmin => {
                z = exact_blocks(problem, &solver, &z, &blocks, &mus, &updated)?;
            }
            DescentKind::FrankWolfe => {
                let grad = blockwise_gradient(problem, &z, &blocks, &mus);
                match problem.action_set() {
                    Some(d) => {
                        let idx = if preset.stolyar_form {
                            stolyar_index(problem, d, &z, &raw_q, preset.alpha)
                        } else {
                            descent_step_fw(&grad, &z, &u, d, preset.beta).index
                        };
                        let x = d.point(idx).to_vec();
                        z = block_step(&z, &x, &u, preset.beta);
                        descent_action = Some((idx, x));
                    }
                    None => {
                        let s = ground.region().linear_oracle(&grad);
                        z = block_step(&z, &s, &u, preset.beta);
                    }
                }
            }
            DescentKind::DirectActionSet => {
                let d = problem.action_set().expect("validated");
                let z_now = z.clone();
                let score = |w: &[f64]| -> f64 {
                    updated
                        .iter()
                        .map(|&b| {
                            let mut p = z_now.clone();
                            for &c in &blocks[b] {
                                p[c] = w[c];
                            }
                            problem.lagrangian(&p, &mus[b])
                        })
                        .sum()
                };
                let st = descent_step_direct(&score, &z, &u, d, preset.beta);
                z = st.z_next;
                descent_action = Some((st.index, st.x));
            }
        }
        let eps_k = fw_gap(problem, &z, &blocks, &mus);
        eps_max = eps_max.max(eps_k);

        // Exact multiplier.
        let g_z = problem.constraint_values(&z);
        state.step(&g_z)?;

        // Action.
        let x = match preset.source {
            MultiplierSource::RunningAverageQueue => descent_action.clone().map(|(j, x)| {
                action_indices.push(j);
                x
            }),
            MultiplierSource::TrackedActionQueue => {
                let (j, x) = rounder.as_mut().expect("tracked").track(&z)?;
                if j != usize::MAX {
                    action_indices.push(j);
                }
                Some(x)
            }
            _ => {
                if let Some((j, _)) = &descent_action {
                    action_indices.push(*j);
                }
                None
            }
        };

        // Approximate multiplier.
        if preset.uses_queue() {
            let xk = x.as_ref().expect("queue sources emit actions");
            let inc = match preset.update {
                ConstraintUpdate::Linear => {
                    let (a, _) = problem.constraints().as_linear().expect("validated");
                    let b_k = arrivals.next(&mut rng);
                    sub(&mat_vec(a, xk), &b_k)
                }
                ConstraintUpdate::NonlinearSampled => (preset.sampled.as_ref().expect("validated"))(k, xk),
                ConstraintUpdate::NonlinearLinearized => {
                    crate::queue::linearized_increment(problem.constraints(), &z, xk)
                }
            };
            if preset.stolyar_form {
                raw_q = queue_update(&raw_q, &inc, preset.clip.map(|c| c / preset.alpha));
                state.set_mu(raw_q.iter().map(|q| q * preset.alpha).collect())?;
            } else {
                state.step_mu(&inc)?;
            }
        } else {
            let l = state.lambda().to_vec();
            state.set_mu(l)?;
        }
        nu_hist.push_front(state.mu().to_vec());
        nu_hist.truncate(tau_bar + 1);

        // Averages.
        let kf = k as f64;
        for (a, v) in z_avg.iter_mut().zip(&z) {
            *a += (v - *a) / kf;
        }
        if let Some(xk) = &x {
            for (a, v) in x_avg.iter_mut().zip(xk) {
                *a += (v - *a) / kf;
            }
        }
        for (a, v) in lambda_avg.iter_mut().zip(&lambda_k) {
            *a += (v - *a) / kf;
        }
        for (a, v) in mu_avg.iter_mut().zip(&nu_k) {
            *a += (v - *a) / kf;
        }
        let f_avg = problem.objective(&z_avg);
        let g_violation_max = problem
            .constraint_values(&z_avg)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);

        let (mut bound_lower, mut bound_upper) = (None, None);
        if let Some(ctx) = bounds {
            let lb = bounded_multiplier_radius(
                &ctx.slater,
                ctx.f_star,
                preset.alpha,
                m,
                setup.bound.l2,
                setup.sigma0,
                eps_max,
                lambda1_norm,
            )?;
            lambda_bar_last = Some(lb);
            if norm2(&lambda_k) > lb * (1.0 + 1e-9) {
                mb_violations += 1;
            }
            let w = theorem3_window(Some(k), preset.alpha, eps_max, setup.sigma0, setup.bound.l2, lb, m);
            bound_lower = Some(w.lower);
            bound_upper = Some(w.upper);
            if k % checkpoint_every == 0 || k == steps {
                checkpoints.push(k);
                if k > burn_in {
                    let d = f_avg - ctx.f_star;
                    if !w.contains(d) {
                        window_violations += 1;
                    }
                    let lb_inf = bounded_multiplier_radius(
                        &ctx.slater,
                        ctx.f_star,
                        preset.alpha,
                        m,
                        setup.bound.inf,
                        setup.sigma0,
                        eps_max,
                        lambda1_norm,
                    )?;
                    let wi = theorem3_window(Some(k), preset.alpha, eps_max, setup.sigma0, setup.bound.inf, lb_inf, m);
                    if !wi.contains(d) {
                        window_violations_inf += 1;
                    }
                }
            }
        }

        records.push(StepRecord {
            k,
            z: z.clone(),
            x,
            q_scaled: nu_k.iter().map(|v| v / preset.alpha).collect(),
            lambda: lambda_k,
            mu: nu_k,
            f_avg,
            g_violation_max,
            bound_lower,
            bound_upper,
            gap,
            eps: eps_k,
        });
    }
    if violations > 0 {
        log::warn!(
            "‖λ − μ‖∞ exceeded α·σ₀ at {violations} of {steps} steps (max ratio {:.4})",
            max_gap / preset.alpha
        );
    }

    Ok(Trajectory {
        preset: preset.kind,
        seed: preset.seed,
        alpha: preset.alpha,
        steps: records,
        z_avg,
        x_avg: (preset.uses_queue()).then_some(x_avg),
        lambda_avg,
        mu_avg,
        sigma0: setup.sigma0,
        g_bar_inf: setup.bound.inf,
        g_bar_l2: setup.bound.l2,
        max_scaled_gap: max_gap / preset.alpha,
        certificate_violations: violations,
        eps_max,
        f_star: bounds.map(|b| b.f_star),
        lambda_bar: lambda_bar_last,
        multiplier_bound_violations: mb_violations,
        checkpoints,
        window_violations,
        window_violations_inf,
        tracker_bound: setup.tracker_bound,
        tracker_max_deviation: rounder.as_ref().map(Rounder::max_deviation),
        arrival_max_deviation: arrivals.max_deviation,
        action_indices,
    })
}

fn block_step(z: &[f64], x: &[f64], u: &[usize], beta: f64) -> Vec<f64> {
    let mut out = z.to_vec();
    for &c in u {
        out[c] = z[c] + beta * (x[c] - z[c]);
    }
    out
}

/// `argmax_{x∈D} (∂U(z) − α Qᵀ A) x` with `U = −f`.
fn stolyar_index(problem: &ConvexProblem, d: &ActionSet, z: &[f64], q: &[f64], alpha: f64) -> usize {
    let (a, _) = problem.constraints().as_linear().expect("validated");
    let du: Vec<f64> = problem.objective_fn().gradient(z).iter().map(|v| -v).collect();
    let aq = crate::vecops::mat_t_vec(a, q, z.len());
    let w: Vec<f64> = du.iter().zip(&aq).map(|(u, p)| u - alpha * p).collect();
    let neg: Vec<f64> = d.iter().map(|x| -dot(&w, x)).collect();
    argmin_tied(&neg).expect("non-empty").0
}

/// Recomputes the argmin of every block in `updated` with its own multiplier.
fn exact_blocks(
    problem: &ConvexProblem,
    solver: &InnerSolver,
    z: &[f64],
    blocks: &[Vec<usize>],
    mus: &[Vec<f64>],
    updated: &[usize],
) -> Result<Vec<f64>, SolverError> {
    if problem.separability().is_none() || !matches!(problem.ground_set(), GroundSet::Box { .. }) {
        if updated.is_empty() {
            return Ok(z.to_vec());
        }
        return Ok(problem.argmin_lagrangian(&mus[0], solver, z)?.point);
    }
    let mut out = z.to_vec();
    for &b in updated {
        let r = problem.block_argmin(b, &mus[b], solver, z)?;
        for (c, v) in blocks[b].iter().zip(&r.point) {
            out[*c] = *v;
        }
    }
    Ok(out)
}

/// Dual value maximised on a grid refined around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEstimate {
    pub lambda: Vec<f64>,
    pub value: f64,
}

/// Maximises `q` over a `11ᵐ` grid of half-width `radius` around `center`,
/// shrinking the grid five times by a factor of 5 around the incumbent.
pub fn estimate_lambda_star(problem: &ConvexProblem, center: &[f64], radius: f64) -> Result<DualEstimate, SolverError> {
    let m = problem.m();
    if m > 4 {
        return Err(SolverError::Unsupported("grid dual search is limited to m ≤ 4".into()));
    }
    let solver = InnerSolver::lenient();
    let q = |l: &[f64]| -> Result<f64, SolverError> { Ok(crate::problem::dual_eval(problem, l, &solver)?.value) };
    let mut best = DualEstimate {
        lambda: center.iter().map(|v| v.max(0.0)).collect(),
        value: q(&center.iter().map(|v| v.max(0.0)).collect::<Vec<_>>())?,
    };
    let mut r = radius;
    for _ in 0..6 {
        let c = best.lambda.clone();
        let total = 11usize.pow(m as u32);
        for idx in 0..total {
            let mut l = vec![0.0; m];
            let mut t = idx;
            for v in l.iter_mut().enumerate() {
                let step = (t % 11) as f64;
                t /= 11;
                *v.1 = (c[v.0] - r + 2.0 * r * step / 10.0).max(0.0);
            }
            let val = q(&l)?;
            if val > best.value {
                best = DualEstimate { lambda: l, value: val };
            }
        }
        r /= 5.0;
    }
    Ok(best)
}

/// Reference optimum from a long exact dual run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimumEstimate {
    /// `f(z⋄_K)` of the reference run.
    pub primal: f64,
    /// Best dual value found near the run's final multiplier.
    pub dual: f64,
    pub lambda: Vec<f64>,
    pub steps: usize,
}

impl OptimumEstimate {
    /// The dual value (a certified lower bound up to inner-solver accuracy).
    pub fn f_star(&self) -> f64 {
        self.dual
    }
}

/// Runs the exact dual method with `α = 10⁻³` for `steps` steps, then refines
/// the dual value around the final multiplier.
pub fn estimate_f_star(problem: &ConvexProblem, steps: usize) -> Result<OptimumEstimate, SolverError> {
    let preset = SolverPreset::exact_dual(1e-3);
    let tr = solve(problem, &preset, steps, None)?;
    let last = tr.last().ok_or_else(|| SolverError::Condition("no steps".into()))?;
    let lambda = tr.lambda_avg.clone();
    let radius = 0.5 * (1.0 + norm_inf(&lambda));
    let est = estimate_lambda_star(problem, &lambda, radius)?;
    Ok(OptimumEstimate {
        primal: last.f_avg,
        dual: est.value,
        lambda: est.lambda,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Constraints, ScalarFn};

    fn toy() -> ConvexProblem {
        ConvexProblem::new(
            ScalarFn::new(|z| z[0] * z[0]).with_gradient(|z| vec![2.0 * z[0]]),
            Constraints::linear(vec![vec![-1.0]], vec![-1.0]),
            GroundSet::new_box(vec![0.0], vec![2.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn window_examples() {
        let w = theorem3_window(None, 0.1, 0.0, 0.0, 1.0, 1.0, 1);
        assert!((w.lower + 0.05).abs() < 1e-15 && (w.upper - 0.1).abs() < 1e-15);
        let w = theorem3_window(Some(100), 0.1, 0.0, 0.0, 1.0, 1.0, 1);
        assert!((w.lower + 0.25).abs() < 1e-12 && (w.upper - 0.25).abs() < 1e-12);
        let w = theorem3_window(None, 1e-12, 0.3, 0.0, 1.0, 1.0, 1);
        assert!((w.lower + 0.3).abs() < 1e-9 && (w.upper - 0.3).abs() < 1e-9);
    }

    #[test]
    fn radius_examples() {
        let p = toy();
        let cert = SlaterCertificate::new(&p, vec![2.0]).unwrap();
        let delta = level_set_slack(0.01, 1, 1.0, 0.0, 0.0);
        assert!((delta - 0.005).abs() < 1e-15);
        let q = 3.0 + delta;
        let lb = bounded_multiplier_radius(&cert, 1.0, 0.01, 1, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!((lb - (2.0 * q + q + 0.01)).abs() < 1e-12);
        let lb = bounded_multiplier_radius(&cert, 1.0, 0.01, 1, 1.0, 0.0, 0.0, 100.0).unwrap();
        assert!((lb - (2.0 * q + 100.0)).abs() < 1e-12);
        // A clip at m𝒬 is admissible.
        assert!(lb >= 1.0 * 3.0);
    }

    #[test]
    fn dither_examples() {
        let v: Vec<f64> = stochastic_arrivals(0.5, 0.5, ArrivalKind::DeterministicDither, 0)
            .unwrap()
            .take(6)
            .collect();
        assert_eq!(v, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!(stochastic_arrivals(0.0, 0.5, ArrivalKind::DeterministicDither, 0)
            .unwrap()
            .take(20)
            .all(|v| v == 0.0));
        let mut a = stochastic_arrivals(0.25, 0.75, ArrivalKind::DeterministicDither, 0).unwrap();
        let ones: f64 = a.by_ref().take(8).sum();
        assert_eq!(ones, 2.0);
        assert!(a.max_deviation() <= 0.75);
        assert!(stochastic_arrivals(1.5, 0.5, ArrivalKind::DeterministicDither, 0).is_err());
        assert!(stochastic_arrivals(0.5, 0.0, ArrivalKind::BernoulliLogged, 0).is_err());
    }

    #[test]
    fn bernoulli_arrivals_log_deviation() {
        let mut a = stochastic_arrivals(0.3, 5.0, ArrivalKind::BernoulliLogged, 7).unwrap();
        let s: f64 = a.by_ref().take(10_000).sum();
        assert!((s / 10_000.0 - 0.3).abs() < 0.03);
        assert!(a.max_deviation() > 0.0);
    }

    #[test]
    fn lattice_dither_tracks_any_mean() {
        let mut ap = ArrivalProcess::new(vec![1.5, -0.5, 2.0], ArrivalModel::Dither);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let b = ap.next(&mut rng);
            assert!((1.0..=2.0).contains(&b[0]));
            assert!((-1.0..=0.0).contains(&b[1]));
            assert_eq!(b[2], 2.0);
        }
        assert!(ap.max_deviation <= 0.5 + 1e-12);
    }

    #[test]
    fn action_map_examples() {
        let d = ActionSet::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let same = randomized_action_map(&d, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(same, d);
        let lossy = randomized_action_map(&d, &[vec![1.0, 0.0], vec![0.2, 0.8]]).unwrap();
        assert_eq!(lossy.point(0), &[0.0]);
        assert!((lossy.point(1)[0] - 0.8).abs() < 1e-15);
        let flat = randomized_action_map(&d, &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(flat.point(0), flat.point(1));
        assert!(randomized_action_map(&d, &[vec![0.5, 0.6], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn exact_dual_on_toy_problem() {
        let p = toy();
        let cert = SlaterCertificate::new(&p, vec![2.0]).unwrap();
        let ctx = BoundContext {
            f_star: 1.0,
            slater: cert,
        };
        let tr = solve(&p, &SolverPreset::exact_dual(0.01), 10_000, Some(&ctx)).unwrap();
        let f = tr.f_avg().unwrap();
        assert!((f - 1.0).abs() < 0.05, "{f}");
        assert_eq!(tr.window_violations, 0);
        assert_eq!(tr.certificate_violations, 0);
        assert_eq!(tr.multiplier_bound_violations, 0);
        assert!((tr.last().unwrap().lambda[0] - 2.0).abs() < 0.05);
    }

    #[test]
    fn running_average_matches_direct_average() {
        let p = toy();
        let tr = solve(&p, &SolverPreset::exact_dual(0.1), 500, None).unwrap();
        let direct: f64 = tr.steps.iter().map(|s| s.z[0]).sum::<f64>() / 500.0;
        assert!((tr.z_avg[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn preset_validation() {
        let p = toy();
        assert!(matches!(
            solve(&p, &SolverPreset::max_weight(0.1, 0.1), 10, None),
            Err(SolverError::Unsupported(_))
        ));
        assert!(matches!(
            solve(&p, &SolverPreset::exact_dual(0.0), 10, None),
            Err(SolverError::Condition(_))
        ));
    }

    #[test]
    fn stale_staleness_from_schedule() {
        let s = make_schedule(3, &[vec![0], vec![1], vec![2]], SchedulePolicy::Cyclic).unwrap();
        assert_eq!(max_staleness(&s, &[vec![0], vec![1], vec![2]]), 2);
        let s = make_schedule(2, &[vec![0], vec![1], vec![0, 1]], SchedulePolicy::Full).unwrap();
        assert_eq!(max_staleness(&s, &[vec![0], vec![1]]), 0);
    }
}
