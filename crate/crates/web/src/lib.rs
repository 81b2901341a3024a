//! wasm-bindgen exports for `www/index.html`.

use dualq_core::harness::{run_scenario, ScenarioConfig, ScenarioId};
use dualq_core::problem::ActionSet;
use dualq_core::queue::queue_distance_bound;
use dualq_core::tracker::Tracker;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Actions emitted by the tracker for a constant target `z` on `D = {0, …, hi}`.
#[wasm_bindgen]
pub struct TrackerDemo {
    actions: Vec<f64>,
    running_avg: Vec<f64>,
    deviation: Vec<f64>,
    bound: f64,
}

#[wasm_bindgen]
impl TrackerDemo {
    #[wasm_bindgen(getter)]
    pub fn actions(&self) -> Vec<f64> {
        self.actions.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn running_avg(&self) -> Vec<f64> {
        self.running_avg.clone()
    }
    /// `|Σ(z_i − x_i)|` after each step.
    #[wasm_bindgen(getter)]
    pub fn deviation(&self) -> Vec<f64> {
        self.deviation.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

#[wasm_bindgen]
pub fn tracker_demo(z: f64, hi: u32, steps: usize) -> Result<TrackerDemo, JsError> {
    let d = ActionSet::integer_grid(1, 0, i64::from(hi.max(1))).map_err(js_err)?;
    let mut t = Tracker::new(d);
    let mut out = TrackerDemo {
        actions: Vec::with_capacity(steps),
        running_avg: Vec::with_capacity(steps),
        deviation: Vec::with_capacity(steps),
        bound: t.deviation_bound(),
    };
    let mut sum = 0.0;
    for k in 1..=steps {
        let j = t.track(&[z]).map_err(js_err)?;
        let x = t.actions().point(j)[0];
        sum += x;
        out.actions.push(x);
        out.running_avg.push(sum / k as f64);
        out.deviation.push(t.cumulative_deviation()[0].abs());
    }
    Ok(out)
}

/// Link example run: `f(z⋄_k)` and the scaled queues `αQ_k`.
#[wasm_bindgen]
pub struct LinkRun {
    f_avg: Vec<f64>,
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    f_star: f64,
    lambda_star: Vec<f64>,
}

#[wasm_bindgen]
impl LinkRun {
    #[wasm_bindgen(getter)]
    pub fn f_avg(&self) -> Vec<f64> {
        self.f_avg.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn mu1(&self) -> Vec<f64> {
        self.mu1.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn mu2(&self) -> Vec<f64> {
        self.mu2.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn f_star(&self) -> f64 {
        self.f_star
    }
    #[wasm_bindgen(getter)]
    pub fn lambda_star(&self) -> Vec<f64> {
        self.lambda_star.clone()
    }
}

#[wasm_bindgen]
pub fn link_convergence(alpha: f64, steps: usize, seed: u64) -> Result<LinkRun, JsError> {
    let mut cfg = ScenarioConfig::builtin(ScenarioId::Link);
    cfg.scenario.steps = Some(steps);
    cfg.preset.alpha = Some(alpha);
    let out = run_scenario(&cfg, seed).map_err(js_err)?;
    let tr = out.trajectory.ok_or_else(|| JsError::new("no trajectory"))?;
    let (f_star, lambda_star) = dualq_core::harness::link_optimum(0.5);
    Ok(LinkRun {
        f_avg: tr.steps.iter().map(|s| s.f_avg).collect(),
        mu1: tr.steps.iter().map(|s| s.mu[0]).collect(),
        mu2: tr.steps.iter().map(|s| s.mu[1]).collect(),
        f_star,
        lambda_star,
    })
}

/// Two scalar queues fed by increments that differ by at most `noise` per step.
#[wasm_bindgen]
pub struct QueuePair {
    distance: Vec<f64>,
    bound: Vec<f64>,
}

#[wasm_bindgen]
impl QueuePair {
    /// `|λ_k − μ_k|`
    #[wasm_bindgen(getter)]
    pub fn distance(&self) -> Vec<f64> {
        self.distance.clone()
    }
    /// `2 max_j |Σ_{i≤j}(x_i − y_i)|`
    #[wasm_bindgen(getter)]
    pub fn bound(&self) -> Vec<f64> {
        self.bound.clone()
    }
}

#[wasm_bindgen]
pub fn queue_continuity(len: usize, noise: f64, drift: f64, seed: u64) -> Result<QueuePair, JsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0) + drift).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| v + noise.abs() * rng.random_range(-1.0..=1.0))
        .collect();
    let d = queue_distance_bound(&x, &y, 0.0).map_err(js_err)?;
    Ok(QueuePair {
        distance: d.lhs,
        bound: d.rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_average_approaches_target() {
        let r = tracker_demo(1.3, 3, 500).unwrap();
        assert!((r.running_avg.last().unwrap() - 1.3).abs() < 0.01);
        assert!(r.deviation.iter().all(|d| *d <= r.bound + 1e-9));
    }

    #[test]
    fn queue_pair_respects_bound() {
        let q = queue_continuity(300, 0.4, -0.1, 1).unwrap();
        assert!(q.distance.iter().zip(&q.bound).all(|(d, b)| d <= &(b + 1e-12)));
    }

    #[test]
    fn link_run_has_one_entry_per_step() {
        let r = link_convergence(0.1, 100, 0).unwrap();
        assert_eq!(r.f_avg.len(), 100);
        assert_eq!(r.lambda_star.len(), 2);
    }
}
