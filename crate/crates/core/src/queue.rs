//! Multiplier and queue updates, the Skorokhod closed form, continuity
//! certificates and delayed multiplier views.

use crate::problem::Constraints;
use crate::vecops::{mat_vec, sub};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("multiplier component {index} is negative ({value})")]
    NegativeMultiplier { index: usize, value: f64 },
    #[error("averaging weight {0} is outside (0, 1)")]
    BetaOutOfRange(f64),
    #[error("step size {0} must be positive")]
    InvalidStep(f64),
    #[error("delay {delay} exceeds the bound {bound}")]
    DelayExceedsBound { delay: usize, bound: usize },
    #[error("delay bound {bound} needs {needed} history entries, only {capacity} kept")]
    HistoryTooShort {
        bound: usize,
        needed: usize,
        capacity: usize,
    },
}

/// `[λ + increment]⁺`, or `[λ + increment]^{[0, clip]}` when `clip` is set.
pub fn queue_update(lambda: &[f64], increment: &[f64], clip: Option<f64>) -> Vec<f64> {
    let hi = clip.unwrap_or(f64::INFINITY);
    lambda
        .iter()
        .zip(increment)
        .map(|(l, d)| (l + d).max(0.0).min(hi))
        .collect()
}

/// Scalar recursion `λ_{k+1} = [λ_k + x_k]⁺` from `λ₁`.
pub fn skorokhod_recursion(lambda1: f64, increments: &[f64]) -> f64 {
    increments.iter().fold(lambda1, |l, x| (l + x).max(0.0))
}

/// `max{ max_j Σ_{i=j}^k x_i, [Σ_i x_i + λ₁]⁺ }`, equal to [`skorokhod_recursion`].
pub fn skorokhod_closed_form(lambda1: f64, increments: &[f64]) -> f64 {
    if increments.is_empty() {
        return lambda1;
    }
    let mut tail = 0.0;
    let mut best_tail = f64::NEG_INFINITY;
    for x in increments.iter().rev() {
        tail += x;
        best_tail = best_tail.max(tail);
    }
    best_tail.max((tail + lambda1).max(0.0))
}

/// Per-prefix `|λ_{k+1} − μ_{k+1}|` and `2 max_{j≤k} |Σ_{i≤j}(x_i − y_i)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueDistance {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl QueueDistance {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs.iter().zip(&self.rhs).all(|(l, r)| *l <= r + tol)
    }
}

/// Runs both scalar queues from a shared start and reports the continuity bound.
pub fn queue_distance_bound(x: &[f64], y: &[f64], start: f64) -> Result<QueueDistance, QueueError> {
    if x.len() != y.len() {
        return Err(QueueError::LengthMismatch(x.len(), y.len()));
    }
    let (mut l, mut m) = (start, start);
    let mut log = IncrementLog::new(1);
    let mut out = QueueDistance {
        lhs: Vec::with_capacity(x.len()),
        rhs: Vec::with_capacity(x.len()),
    };
    for (xi, yi) in x.iter().zip(y) {
        l = (l + xi).max(0.0);
        m = (m + yi).max(0.0);
        log.push(&[*xi], &[*yi]);
        out.lhs.push((l - m).abs());
        out.rhs.push(log.bound());
    }
    Ok(out)
}

/// `(1 − β) z + β x`.
pub fn running_average_step(z: &[f64], x: &[f64], beta: f64) -> Result<Vec<f64>, QueueError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(QueueError::BetaOutOfRange(beta));
    }
    if z.len() != x.len() {
        return Err(QueueError::Dimension {
            expected: z.len(),
            got: x.len(),
        });
    }
    Ok(z.iter().zip(x).map(|(a, b)| (1.0 - beta) * a + beta * b).collect())
}

/// Running partial sums `Σ(x_i − y_i)` and their largest absolute prefix value.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementLog {
    partial_sums: Vec<f64>,
    max_abs_partial: Vec<f64>,
}

impl IncrementLog {
    pub fn new(m: usize) -> Self {
        Self {
            partial_sums: vec![0.0; m],
            max_abs_partial: vec![0.0; m],
        }
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        for ((s, mx), (a, b)) in self
            .partial_sums
            .iter_mut()
            .zip(self.max_abs_partial.iter_mut())
            .zip(x.iter().zip(y))
        {
            *s += a - b;
            *mx = mx.max(s.abs());
        }
    }

    pub fn partial_sums(&self) -> &[f64] {
        &self.partial_sums
    }

    pub fn max_abs_partial(&self) -> &[f64] {
        &self.max_abs_partial
    }

    /// `2 max_i max_j |Σ_{i≤j}(x − y)|`, the ∞-norm continuity bound.
    pub fn bound(&self) -> f64 {
        2.0 * self.max_abs_partial.iter().copied().fold(0.0, f64::max)
    }
}

/// Exact multiplier `λ`, approximate multiplier `μ`, and bounded history of `λ`.
#[derive(Debug, Clone)]
pub struct MultiplierState {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    alpha: f64,
    clip: Option<f64>,
    history: VecDeque<Vec<f64>>,
    capacity: usize,
    sigma0: Option<f64>,
    step: usize,
    max_gap: f64,
    violations: usize,
}

impl MultiplierState {
    pub fn new(m: usize, alpha: f64) -> Result<Self, QueueError> {
        Self::with_initial(vec![0.0; m], alpha)
    }

    pub fn with_initial(lambda: Vec<f64>, alpha: f64) -> Result<Self, QueueError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(QueueError::InvalidStep(alpha));
        }
        check_nonneg(&lambda)?;
        let mut history = VecDeque::new();
        history.push_front(lambda.clone());
        Ok(Self {
            mu: lambda.clone(),
            lambda,
            alpha,
            clip: None,
            history,
            capacity: 1,
            sigma0: None,
            step: 0,
            max_gap: 0.0,
            violations: 0,
        })
    }

    /// Enables `[·]^{[0, clip]}` projection.
    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = Some(clip);
        for l in self.lambda.iter_mut().chain(self.mu.iter_mut()) {
            *l = l.min(clip);
        }
        self.history[0] = self.lambda.clone();
        self
    }

    /// Keeps `2τ̄ + 1` past values of `λ` for delayed views.
    pub fn with_delay_bound(self, tau_bar: usize) -> Self {
        self.with_history_capacity(2 * tau_bar + 1)
    }

    pub fn with_history_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    /// Diagnostic radius: `‖λ − μ‖_∞ ≤ α σ₀` is checked on every [`Self::set_mu`].
    pub fn with_sigma0(mut self, sigma0: f64) -> Self {
        self.sigma0 = Some(sigma0);
        self
    }

    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn clip(&self) -> Option<f64> {
        self.clip
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma0(&self) -> Option<f64> {
        self.sigma0
    }

    /// Number of completed `λ` updates.
    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Scaled queue `Q = μ / α`.
    pub fn queue(&self) -> Vec<f64> {
        self.mu.iter().map(|v| v / self.alpha).collect()
    }

    /// Largest `‖λ − μ‖_∞` observed by [`Self::set_mu`].
    pub fn max_gap(&self) -> f64 {
        self.max_gap
    }

    /// Steps at which the σ₀ diagnostic failed.
    pub fn violations(&self) -> usize {
        self.violations
    }

    /// `λ ← [λ + α g]⁺` (clipped when configured).
    pub fn step(&mut self, g: &[f64]) -> Result<(), QueueError> {
        if g.len() != self.m() {
            return Err(QueueError::Dimension {
                expected: self.m(),
                got: g.len(),
            });
        }
        let inc: Vec<f64> = g.iter().map(|v| self.alpha * v).collect();
        self.lambda = queue_update(&self.lambda, &inc, self.clip);
        self.history.push_front(self.lambda.clone());
        self.history.truncate(self.capacity);
        self.step += 1;
        Ok(())
    }

    /// `μ ← [μ + α h]⁺`, used when the approximate multiplier is itself a queue.
    pub fn step_mu(&mut self, h: &[f64]) -> Result<bool, QueueError> {
        if h.len() != self.m() {
            return Err(QueueError::Dimension {
                expected: self.m(),
                got: h.len(),
            });
        }
        let inc: Vec<f64> = h.iter().map(|v| self.alpha * v).collect();
        let mu = queue_update(&self.mu, &inc, self.clip);
        self.set_mu(mu)
    }

    /// Replaces `μ` and checks the σ₀ diagnostic; `Ok(false)` on a violation.
    pub fn set_mu(&mut self, mu: Vec<f64>) -> Result<bool, QueueError> {
        if mu.len() != self.m() {
            return Err(QueueError::Dimension {
                expected: self.m(),
                got: mu.len(),
            });
        }
        check_nonneg(&mu)?;
        self.mu = mu;
        let gap = crate::vecops::dist_inf(&self.lambda, &self.mu);
        self.max_gap = self.max_gap.max(gap);
        if let Some(s) = self.sigma0 {
            if gap > self.alpha * s * (1.0 + 1e-9) + 1e-12 {
                self.violations += 1;
                log::warn!(
                    "step {}: ‖λ − μ‖∞ = {gap:.6e} exceeds α·σ₀ = {:.6e}",
                    self.step,
                    self.alpha * s
                );
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `λ` from `tau` updates ago; requests before the first update return `λ₁`.
    pub fn past(&self, tau: usize) -> Result<&[f64], QueueError> {
        if tau >= self.capacity {
            return Err(QueueError::HistoryTooShort {
                bound: tau,
                needed: tau + 1,
                capacity: self.capacity,
            });
        }
        let idx = tau.min(self.history.len() - 1);
        Ok(&self.history[idx])
    }

    /// Sends `(k, λ, μ, Q)` to a trajectory sink.
    pub fn emit(&self, sink: &mut dyn FnMut(usize, &[f64], &[f64], &[f64])) {
        sink(self.step, &self.lambda, &self.mu, &self.queue());
    }
}

fn check_nonneg(v: &[f64]) -> Result<(), QueueError> {
    match v.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        Some((index, &value)) => Err(QueueError::NegativeMultiplier { index, value }),
        None => Ok(()),
    }
}

/// `μ^(i) = λ^(i)_{k − τ^(i)}`.
pub fn delayed_multiplier_view(
    state: &MultiplierState,
    delays: &[usize],
    tau_bar: usize,
) -> Result<Vec<f64>, QueueError> {
    if delays.len() != state.m() {
        return Err(QueueError::Dimension {
            expected: state.m(),
            got: delays.len(),
        });
    }
    if tau_bar + 1 > state.capacity {
        return Err(QueueError::HistoryTooShort {
            bound: tau_bar,
            needed: tau_bar + 1,
            capacity: state.capacity,
        });
    }
    delays
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > tau_bar {
                return Err(QueueError::DelayExceedsBound {
                    delay: d,
                    bound: tau_bar,
                });
            }
            Ok(state.past(d)?[i])
        })
        .collect()
}

/// Linear increment `A x − b_k`.
pub fn linear_increment(a: &[Vec<f64>], x: &[f64], b_k: &[f64]) -> Vec<f64> {
    sub(&mat_vec(a, x), b_k)
}

/// Linearised increment `g(z) + ∂g(z)(x − z)`.
pub fn linearized_increment(constraints: &Constraints, z: &[f64], x: &[f64]) -> Vec<f64> {
    let jac = constraints.jacobian(z);
    let d = sub(x, z);
    constraints
        .eval(z)
        .iter()
        .zip(mat_vec(&jac, &d))
        .map(|(g, j)| g + j)
        .collect()
}

/// Sampled nonlinear increment `g_k(x_k)`.
pub fn sampled_increment(g_k: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Vec<f64> {
    g_k(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_update_examples() {
        assert_eq!(queue_update(&[2.0], &[-5.0], None), vec![0.0]);
        assert_eq!(queue_update(&[2.0], &[10.0], Some(5.0)), vec![5.0]);
        let r = queue_update(&[1.0, 0.0], &[0.3, -0.2], None);
        assert!((r[0] - 1.3).abs() < 1e-15 && r[1] == 0.0);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(skorokhod_closed_form(0.0, &[1.0, -2.0, 3.0]), 3.0);
        assert_eq!(skorokhod_recursion(0.0, &[1.0, -2.0, 3.0]), 3.0);
        assert_eq!(skorokhod_closed_form(0.0, &[-1.0, -0.5, -2.0]), 0.0);
        assert_eq!(skorokhod_closed_form(5.0, &[-1.0, -1.0]), 3.0);
        assert_eq!(skorokhod_closed_form(4.0, &[]), 4.0);
    }

    #[test]
    fn distance_examples() {
        let x = [0.5, -1.0, 2.0];
        let d = queue_distance_bound(&x, &x, 1.0).unwrap();
        assert!(d.lhs.iter().all(|v| *v == 0.0));
        let d = queue_distance_bound(&[1.0, 1.0, 1.0], &[0.0; 3], 0.0).unwrap();
        assert_eq!(d.lhs[2], 3.0);
        assert_eq!(d.rhs[2], 6.0);
        assert!(queue_distance_bound(&[1.0], &[], 0.0).is_err());
    }

    #[test]
    fn running_average_examples() {
        assert_eq!(running_average_step(&[0.7], &[0.7], 0.3).unwrap(), vec![0.7]);
        assert!((running_average_step(&[0.0], &[1.0], 0.1).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!(running_average_step(&[0.0], &[1.0], 1.0).is_err());
        assert!(running_average_step(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn average_of_constant_tracks_geometrically() {
        let (c, beta) = (2.0, 0.1);
        let mut z = vec![0.0];
        let mut log = IncrementLog::new(1);
        for _ in 0..500 {
            log.push(&z, &[c]);
            z = running_average_step(&z, &[c], beta).unwrap();
        }
        assert!((z[0] - c).abs() <= c * 0.9_f64.powi(500) + 1e-12);
        assert!(log.max_abs_partial()[0] <= c / beta + 1e-9);
    }

    #[test]
    fn rescaled_queue_matches_multiplier() {
        let alpha = 0.25;
        let mut st = MultiplierState::new(1, alpha).unwrap();
        let mut q = 0.0_f64;
        for k in 0..50 {
            let inc = if k % 3 == 0 { 1.0 } else { -0.5 };
            st.step_mu(&[inc]).unwrap();
            q = (q + inc).max(0.0);
            assert_eq!(st.queue()[0], q);
        }
    }

    #[test]
    fn clipped_state_stays_in_range() {
        let mut st = MultiplierState::new(2, 1.0).unwrap().with_clip(3.0);
        for _ in 0..10 {
            st.step(&[1.0, -1.0]).unwrap();
        }
        assert_eq!(st.lambda(), &[3.0, 0.0]);
    }

    #[test]
    fn delay_view_examples() {
        let mut st = MultiplierState::new(2, 0.5).unwrap().with_delay_bound(5);
        for k in 0..20 {
            st.step(&[1.0, if k % 2 == 0 { 1.0 } else { 0.5 }]).unwrap();
        }
        assert_eq!(delayed_multiplier_view(&st, &[0, 0], 5).unwrap(), st.lambda());
        let mu = delayed_multiplier_view(&st, &[5, 2], 5).unwrap();
        assert_eq!(mu[0], st.lambda()[0] - 2.5);
        assert!(matches!(
            delayed_multiplier_view(&st, &[6, 0], 5),
            Err(QueueError::DelayExceedsBound { .. })
        ));
        assert!(matches!(
            delayed_multiplier_view(&st, &[0, 0], 11),
            Err(QueueError::HistoryTooShort { .. })
        ));

        let mut flat = MultiplierState::with_initial(vec![1.0], 0.1)
            .unwrap()
            .with_delay_bound(3);
        for _ in 0..10 {
            flat.step(&[0.0]).unwrap();
        }
        assert_eq!(delayed_multiplier_view(&flat, &[3], 3).unwrap(), vec![1.0]);
    }

    #[test]
    fn early_delays_reach_back_to_start() {
        let mut st = MultiplierState::with_initial(vec![2.0], 1.0)
            .unwrap()
            .with_delay_bound(4);
        st.step(&[1.0]).unwrap();
        assert_eq!(st.past(4).unwrap(), &[2.0]);
    }

    #[test]
    fn sigma0_diagnostic_counts_violations() {
        let mut st = MultiplierState::new(1, 0.1).unwrap().with_sigma0(1.0);
        st.step(&[5.0]).unwrap();
        assert!(st.set_mu(vec![0.45]).unwrap());
        assert!(!st.set_mu(vec![0.0]).unwrap());
        assert_eq!(st.violations(), 1);
        assert!((st.max_gap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn increment_builders() {
        let a = vec![vec![1.0, 0.0], vec![-1.0, 1.0]];
        assert_eq!(linear_increment(&a, &[1.0, 0.0], &[0.5, 0.0]), vec![0.5, -1.0]);
        let lin = Constraints::linear(a, vec![0.5, 0.0]);
        let r = linearized_increment(&lin, &[0.2, 0.9], &[1.0, 0.0]);
        assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] + 1.0).abs() < 1e-12);
        let quad = Constraints::general(1, |z| vec![z[0] * z[0] - 1.0]).with_jacobian(|z| vec![vec![2.0 * z[0]]]);
        // 1 − 1 + 2·(3 − 1) = 4
        assert_eq!(linearized_increment(&quad, &[1.0], &[3.0]), vec![4.0]);
        assert_eq!(sampled_increment(&|x| vec![x[0] - 1.0], &[3.0]), vec![2.0]);
    }

    #[test]
    fn sink_receives_state() {
        let mut st = MultiplierState::new(1, 0.5).unwrap();
        st.step_mu(&[2.0]).unwrap();
        let mut seen = Vec::new();
        st.emit(&mut |k, l, m, q| seen.push((k, l[0], m[0], q[0])));
        assert_eq!(seen, vec![(0, 0.0, 1.0, 2.0)]);
    }
}
