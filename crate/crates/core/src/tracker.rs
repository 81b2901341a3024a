//! Online rounding of a continuous sequence `z_k ∈ conv(D)` to actions
//! `x_k ∈ D` with uniformly bounded cumulative deviation.

use crate::hull::{self, HullError};
use crate::problem::ActionSet;
use crate::vecops::{argmin_by, norm_inf};
use thiserror::Error;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("weights are not in the simplex: {0}")]
    NotSimplex(String),
    #[error(transparent)]
    Hull(#[from] HullError),
    #[error("drift floor must be at least 1, got {0}")]
    InvalidFloor(f64),
    #[error("no action satisfies the drift floor")]
    NoEligibleAction,
    #[error("hold must be at least 1")]
    ZeroHold,
    #[error("blocks do not partition {0} coordinates")]
    BadBlocks(usize),
    #[error("assembled block action {0:?} is not in D")]
    NotAnAction(Vec<f64>),
}

/// Rule for picking `b_{k+1} = e_j` among eligible indices. Ties go to the lowest index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionRule {
    /// `argmin_j ‖S + a − e_j‖_∞` over eligible `j`.
    #[default]
    MinInfNorm,
    /// Largest entry of `S + a`.
    LargestEntry,
    /// Lowest `j` with `S_j + a_j ≥ 1 − S̄`.
    FirstEligible,
}

impl std::str::FromStr for SelectionRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min_inf_norm" | "argmin" => Ok(Self::MinInfNorm),
            "largest_entry" | "max" => Ok(Self::LargestEntry),
            "first_eligible" | "first" => Ok(Self::FirstEligible),
            other => Err(format!("unknown selection rule `{other}`")),
        }
    }
}

/// Simplex weights `a` with `X a = z`, at most `n + 1` of them nonzero.
pub fn decompose_to_simplex(z: &[f64], actions: &ActionSet) -> Result<Vec<f64>, TrackerError> {
    Ok(hull::decompose(actions.points(), z)?)
}

/// Tracker state: actions `X`, drift `S = Σ(a_i − b_i)` and floor `S̄`.
#[derive(Debug, Clone)]
pub struct Tracker {
    actions: ActionSet,
    s: Vec<f64>,
    s_bar: f64,
    rule: SelectionRule,
    deviation: Vec<f64>,
    max_deviation: f64,
    steps: usize,
}

impl Tracker {
    pub fn new(actions: ActionSet) -> Self {
        let d = actions.len();
        let n = actions.dim();
        Self {
            actions,
            s: vec![0.0; d],
            s_bar: 1.0,
            rule: SelectionRule::default(),
            deviation: vec![0.0; n],
            max_deviation: 0.0,
            steps: 0,
        }
    }

    pub fn with_floor(mut self, s_bar: f64) -> Result<Self, TrackerError> {
        if !(s_bar >= 1.0) {
            return Err(TrackerError::InvalidFloor(s_bar));
        }
        self.s_bar = s_bar;
        Ok(self)
    }

    pub fn with_rule(mut self, rule: SelectionRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn drift(&self) -> &[f64] {
        &self.s
    }

    pub fn floor(&self) -> f64 {
        self.s_bar
    }

    pub fn rule(&self) -> SelectionRule {
        self.rule
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `Σ_{i≤k}(z_i − x_i)` over the steps fed through [`Self::track`].
    pub fn cumulative_deviation(&self) -> &[f64] {
        &self.deviation
    }

    /// Largest prefix `‖Σ(z − x)‖_∞` seen so far.
    pub fn max_deviation(&self) -> f64 {
        self.max_deviation
    }

    /// `(|D| − 1) S̄ ‖X‖_∞` with the induced (row-sum) norm.
    pub fn deviation_bound(&self) -> f64 {
        (self.actions.len() as f64 - 1.0) * self.s_bar * self.actions.matrix_inf_norm()
    }

    /// Picks `j` for the next weights `a`, updates `S ← S + a − e_j`.
    pub fn select_action(&mut self, a: &[f64]) -> Result<usize, TrackerError> {
        check_simplex(a, self.s.len())?;
        let sa: Vec<f64> = self.s.iter().zip(a).map(|(s, a)| s + a).collect();
        let floor = 1.0 - self.s_bar - 1e-12;
        let eligible = |j: usize| sa[j] >= floor;
        let j = match self.rule {
            SelectionRule::FirstEligible => (0..sa.len()).find(|&j| eligible(j)),
            SelectionRule::LargestEntry => argmin_by(sa.iter().map(|v| -v))
                .map(|(j, _)| j)
                .filter(|&j| eligible(j)),
            SelectionRule::MinInfNorm => {
                let base = |skip: usize| {
                    sa.iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, v)| v.abs())
                        .fold(0.0, f64::max)
                };
                argmin_by((0..sa.len()).map(|j| {
                    if eligible(j) {
                        base(j).max((sa[j] - 1.0).abs())
                    } else {
                        f64::NAN
                    }
                }))
                .map(|(j, _)| j)
            }
        }
        .ok_or(TrackerError::NoEligibleAction)?;
        self.s = sa;
        self.s[j] -= 1.0;
        Ok(j)
    }

    /// Decomposes `z`, selects an action and records the deviation `z − x`.
    pub fn track(&mut self, z: &[f64]) -> Result<usize, TrackerError> {
        let a = decompose_to_simplex(z, &self.actions)?;
        let j = self.select_action(&a)?;
        for (d, (zi, xi)) in self.deviation.iter_mut().zip(z.iter().zip(self.actions.point(j))) {
            *d += zi - xi;
        }
        self.max_deviation = self.max_deviation.max(norm_inf(&self.deviation));
        self.steps += 1;
        Ok(j)
    }
}

fn check_simplex(a: &[f64], d: usize) -> Result<(), TrackerError> {
    if a.len() != d {
        return Err(TrackerError::NotSimplex(format!("length {} ≠ |D| = {d}", a.len())));
    }
    if let Some(v) = a.iter().find(|v| !(**v >= -SIMPLEX_TOL)) {
        return Err(TrackerError::NotSimplex(format!("negative weight {v}")));
    }
    let s: f64 = a.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(TrackerError::NotSimplex(format!("weights sum to {s}")));
    }
    Ok(())
}

/// Output of [`track_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackReport {
    pub indices: Vec<usize>,
    /// `‖Σ_{i≤k}(z_i − x_i)‖_∞` after each step.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
    pub bound: f64,
}

impl TrackReport {
    pub fn actions<'a>(&'a self, d: &'a ActionSet) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.indices.iter().map(move |&j| d.point(j))
    }
}

/// Tracks every `z_k` in order.
pub fn track_sequence<'a, I>(z_seq: I, tracker: &mut Tracker) -> Result<TrackReport, TrackerError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut indices = Vec::new();
    let mut deviation = Vec::new();
    for z in z_seq {
        indices.push(tracker.track(z)?);
        deviation.push(norm_inf(tracker.cumulative_deviation()));
    }
    Ok(TrackReport {
        indices,
        max_deviation: tracker.max_deviation(),
        bound: tracker.deviation_bound(),
        deviation,
    })
}

/// Feeds every slow-clock value `hold` times on the fast clock.
pub fn two_timescale_track<'a, I>(z_slow: I, hold: usize, tracker: &mut Tracker) -> Result<TrackReport, TrackerError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if hold == 0 {
        return Err(TrackerError::ZeroHold);
    }
    let fast: Vec<&[f64]> = z_slow.into_iter().flat_map(|z| std::iter::repeat_n(z, hold)).collect();
    track_sequence(fast, tracker)
}

/// Independent trackers on the coordinate blocks of a `𝒰`-feasible action set.
#[derive(Debug, Clone)]
pub struct BlockTracker {
    actions: ActionSet,
    blocks: Vec<Vec<usize>>,
    trackers: Vec<Tracker>,
}

impl BlockTracker {
    pub fn new(actions: ActionSet, blocks: Vec<Vec<usize>>, rule: SelectionRule) -> Result<Self, TrackerError> {
        let n = actions.dim();
        let mut seen = vec![false; n];
        for &c in blocks.iter().flatten() {
            if c >= n || seen[c] {
                return Err(TrackerError::BadBlocks(n));
            }
            seen[c] = true;
        }
        if seen.contains(&false) {
            return Err(TrackerError::BadBlocks(n));
        }
        let trackers = blocks
            .iter()
            .map(|b| Tracker::new(actions.project(b)).with_rule(rule))
            .collect();
        Ok(Self {
            actions,
            blocks,
            trackers,
        })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn trackers(&self) -> &[Tracker] {
        &self.trackers
    }

    /// Tracks `z` blockwise and returns the assembled action.
    pub fn track(&mut self, z: &[f64]) -> Result<Vec<f64>, TrackerError> {
        let mut x = vec![0.0; z.len()];
        for (b, t) in self.blocks.iter().zip(self.trackers.iter_mut()) {
            let w: Vec<f64> = b.iter().map(|&c| z[c]).collect();
            let j = t.track(&w)?;
            for (c, v) in b.iter().zip(t.actions().point(j)) {
                x[*c] = *v;
            }
        }
        if !self.actions.iter().any(|p| p == x.as_slice()) {
            return Err(TrackerError::NotAnAction(x));
        }
        Ok(x)
    }

    /// Largest per-block prefix deviation.
    pub fn max_deviation(&self) -> f64 {
        self.trackers.iter().map(Tracker::max_deviation).fold(0.0, f64::max)
    }

    pub fn deviation_bound(&self) -> f64 {
        self.trackers.iter().map(Tracker::deviation_bound).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> ActionSet {
        ActionSet::new(vec![vec![0.0], vec![1.0]]).unwrap()
    }

    fn triangle() -> ActionSet {
        ActionSet::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn decompose_examples() {
        assert_eq!(decompose_to_simplex(&[1.0], &binary()).unwrap(), vec![0.0, 1.0]);
        let a = decompose_to_simplex(&[0.6], &binary()).unwrap();
        assert!((a[0] - 0.4).abs() < 1e-12 && (a[1] - 0.6).abs() < 1e-12);
        let a = decompose_to_simplex(&[0.25, 0.25], &triangle()).unwrap();
        for (v, e) in a.iter().zip([0.5, 0.25, 0.25]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert!(decompose_to_simplex(&[0.8, 0.8], &triangle()).is_err());
    }

    #[test]
    fn largest_entry_hand_trace() {
        let mut t = Tracker::new(binary()).with_rule(SelectionRule::LargestEntry);
        assert_eq!(t.select_action(&[0.4, 0.6]).unwrap(), 1);
        assert!((t.drift()[0] - 0.4).abs() < 1e-15 && (t.drift()[1] + 0.4).abs() < 1e-15);
        assert_eq!(t.select_action(&[0.4, 0.6]).unwrap(), 0);
        assert!((t.drift()[0] + 0.2).abs() < 1e-15 && (t.drift()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn vertex_weights_keep_zero_drift() {
        for rule in [SelectionRule::MinInfNorm, SelectionRule::LargestEntry] {
            let mut t = Tracker::new(triangle()).with_rule(rule);
            assert_eq!(t.select_action(&[0.0, 0.0, 1.0]).unwrap(), 2);
            assert!(t.drift().iter().all(|s| *s == 0.0));
        }
        // With S̄ = 1 the floor admits every j with S_j + a_j ≥ 0.
        let mut t = Tracker::new(triangle()).with_rule(SelectionRule::FirstEligible);
        assert_eq!(t.select_action(&[0.0, 0.0, 1.0]).unwrap(), 0);
        assert_eq!(t.drift(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_non_simplex_weights() {
        let mut t = Tracker::new(binary());
        assert!(t.select_action(&[0.5, 0.6]).is_err());
        assert!(t.select_action(&[-0.5, 1.5]).is_err());
        assert!(t.select_action(&[1.0]).is_err());
        assert!(Tracker::new(binary()).with_floor(0.5).is_err());
    }

    #[test]
    fn harmonic_sequence_stays_within_one() {
        let zs: Vec<Vec<f64>> = (1..=1000).map(|k| vec![0.75 / k as f64 + 0.25]).collect();
        let mut t = Tracker::new(binary());
        let r = track_sequence(zs.iter().map(Vec::as_slice), &mut t).unwrap();
        assert_eq!(r.bound, 1.0);
        assert!(r.max_deviation <= 1.0 + 1e-9);
    }

    #[test]
    fn constant_vertex_sequence_has_no_deviation() {
        let zs = vec![vec![1.0, 0.0]; 50];
        let mut t = Tracker::new(triangle());
        let r = track_sequence(zs.iter().map(Vec::as_slice), &mut t).unwrap();
        assert!(r.indices.iter().all(|&j| j == 1));
        assert_eq!(r.max_deviation, 0.0);
    }

    #[test]
    fn two_timescale_counts_ones() {
        let zs = vec![vec![0.3]; 10];
        let mut t = Tracker::new(binary());
        let r = two_timescale_track(zs.iter().map(Vec::as_slice), 10, &mut t).unwrap();
        assert_eq!(r.indices.len(), 100);
        let ones = r.indices.iter().filter(|&&j| j == 1).count();
        assert!((29..=31).contains(&ones), "{ones}");
        assert!(r.max_deviation <= 1.0 + 1e-9);
        assert!(two_timescale_track(zs.iter().map(Vec::as_slice), 0, &mut t).is_err());
    }

    #[test]
    fn hold_one_matches_plain_tracking() {
        let zs: Vec<Vec<f64>> = (0..40).map(|k| vec![(k as f64 * 0.37).fract()]).collect();
        let mut a = Tracker::new(binary());
        let mut b = Tracker::new(binary());
        let ra = track_sequence(zs.iter().map(Vec::as_slice), &mut a).unwrap();
        let rb = two_timescale_track(zs.iter().map(Vec::as_slice), 1, &mut b).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn block_tracker_on_grid() {
        let d = ActionSet::integer_grid(2, 0, 2).unwrap();
        let mut bt = BlockTracker::new(d, vec![vec![0], vec![1]], SelectionRule::MinInfNorm).unwrap();
        let mut sum = [0.0, 0.0];
        for k in 0..200 {
            let z = [1.3, 0.4 + 0.001 * k as f64];
            let x = bt.track(&z).unwrap();
            sum[0] += z[0] - x[0];
            sum[1] += z[1] - x[1];
        }
        assert!(sum[0].abs() <= bt.deviation_bound() + 1e-9);
        assert!(bt.max_deviation() <= bt.deviation_bound() + 1e-9);
        assert!(BlockTracker::new(triangle(), vec![vec![0]], SelectionRule::MinInfNorm).is_err());
    }

    #[test]
    fn rule_names_parse() {
        assert_eq!(
            "first_eligible".parse::<SelectionRule>().unwrap(),
            SelectionRule::FirstEligible
        );
        assert!("nope".parse::<SelectionRule>().is_err());
    }
}
