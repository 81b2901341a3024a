//! Built-in scenarios, TOML scenario configs and trajectory emission.

use crate::descent::SchedulePolicy;
use crate::problem::{
    ActionSet, Block, Constraints, ConvexProblem, Curvature, GroundSet, ProblemError, ScalarFn, SeparableStructure,
    SlaterCertificate,
};
use crate::queue::{queue_update, running_average_step, QueueError};
use crate::solver::{
    estimate_f_star, solve, ArrivalModel, BoundContext, DelayModel, PresetKind, SolverError, SolverPreset, Trajectory,
};
use crate::tracker::{two_timescale_track, SelectionRule, Tracker, TrackerError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config rejected: {0}")]
    Validation(String),
    #[error("cannot parse config")]
    Parse(#[from] toml::de::Error),
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(SolverError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

impl From<SolverError> for HarnessError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Condition(m) | SolverError::Unsupported(m) => HarnessError::Validation(m),
            SolverError::Arrivals(m) => HarnessError::Validation(m),
            other => HarnessError::Solver(other),
        }
    }
}

/// `min z² s.t. 1 − z ≤ 0, z ∈ [0, 2]`; optimum 1 at `z = 1`, `λ* = 2`.
pub fn toy_problem() -> ConvexProblem {
    ConvexProblem::new(
        ScalarFn::new(|z| z[0] * z[0]).with_gradient(|z| vec![2.0 * z[0]]),
        Constraints::linear(vec![vec![-1.0]], vec![-1.0]),
        GroundSet::new_box(vec![0.0], vec![2.0]).expect("valid box"),
    )
    .expect("valid toy problem")
    .with_curvature(Curvature {
        objective: 1.0,
        constraints: vec![0.0],
    })
}

fn link_utility(z: f64) -> f64 {
    z.exp().max(std::f64::consts::PI * z)
}

fn link_slope(z: f64) -> f64 {
    if z.exp() >= std::f64::consts::PI * z {
        z.exp()
    } else {
        std::f64::consts::PI
    }
}

/// Two-hop link: `min z₁ + max{eᶻ², πz₂}` s.t. `b ≤ z₁ ≤ z₂`, `D = {0,1}²`.
pub fn link_problem(b: f64) -> Result<ConvexProblem, ProblemError> {
    let a = vec![vec![-1.0, 0.0], vec![1.0, -1.0]];
    let rhs = vec![-b, 0.0];
    let blocks = vec![
        Block {
            coords: vec![0],
            objective: ScalarFn::new(|w| w[0]),
            constraints: Constraints::linear(vec![vec![-1.0], vec![1.0]], vec![-b, 0.0]),
        },
        Block {
            coords: vec![1],
            objective: ScalarFn::new(|w| link_utility(w[0])),
            constraints: Constraints::linear(vec![vec![0.0], vec![-1.0]], vec![0.0, 0.0]),
        },
    ];
    let sep = SeparableStructure::new(2, blocks, true)?;
    ConvexProblem::new(
        ScalarFn::new(|z| z[0] + link_utility(z[1])).with_gradient(|z| vec![1.0, link_slope(z[1])]),
        Constraints::linear(a, rhs),
        GroundSet::new_box(vec![0.0; 2], vec![1.0; 2])?,
    )?
    .with_actions(ActionSet::integer_grid(2, 0, 1)?)?
    .with_separability(sep)
}

/// Analytic optimum `(f*, λ*)` of [`link_problem`].
pub fn link_optimum(b: f64) -> (f64, Vec<f64>) {
    let l2 = link_slope(b);
    (b + link_utility(b), vec![1.0 + l2, l2])
}

/// Multipliers drawn in the published link figure.
pub const LINK_PUBLISHED_LAMBDA: [f64; 2] = [2.56, 1.65];
/// Published optimum of the link example.
pub const LINK_PUBLISHED_F_STAR: f64 = 2.15;

/// `n` queues: `min Σ zᵢ²` s.t. `bᵢ ≤ zᵢ`, `D = {0,…,d}ⁿ`, coordinate blocks.
pub fn unsync_problem(b: &[f64], d: u32) -> Result<ConvexProblem, ProblemError> {
    let n = b.len();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { -1.0 } else { 0.0 }).collect())
        .collect();
    let rhs: Vec<f64> = b.iter().map(|v| -v).collect();
    let blocks = (0..n)
        .map(|i| {
            let col: Vec<Vec<f64>> = (0..n).map(|r| vec![if r == i { -1.0 } else { 0.0 }]).collect();
            let bi: Vec<f64> = (0..n).map(|r| if r == i { -b[i] } else { 0.0 }).collect();
            Block {
                coords: vec![i],
                objective: ScalarFn::new(|w| w[0] * w[0]),
                constraints: Constraints::linear(col, bi),
            }
        })
        .collect();
    let sep = SeparableStructure::new(n, blocks, false)?;
    ConvexProblem::new(
        ScalarFn::new(|z| z.iter().map(|v| v * v).sum()).with_gradient(|z| z.iter().map(|v| 2.0 * v).collect()),
        Constraints::linear(a, rhs),
        GroundSet::new_box(vec![0.0; n], vec![f64::from(d); n])?,
    )?
    .with_actions(ActionSet::integer_grid(n, 0, i64::from(d))?)?
    .with_separability(sep)
    .map(|p| {
        p.with_curvature(Curvature {
            objective: 1.0,
            constraints: vec![0.0; n],
        })
    })
}

/// `(f*, λ*) = (Σ bᵢ², 2b)`.
pub fn unsync_optimum(b: &[f64]) -> (f64, Vec<f64>) {
    (b.iter().map(|v| v * v).sum(), b.iter().map(|v| 2.0 * v).collect())
}

/// Scenario identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    Fig1,
    Fig2,
    #[serde(alias = "fig5")]
    TwoTimescale,
    Link,
    #[serde(alias = "unsync")]
    UnsyncQueues,
    #[default]
    Custom,
}

impl ScenarioId {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Fig1 => "fig1",
            ScenarioId::Fig2 => "fig2",
            ScenarioId::TwoTimescale => "two_timescale",
            ScenarioId::Link => "link",
            ScenarioId::UnsyncQueues => "unsync_queues",
            ScenarioId::Custom => "custom",
        }
    }

    fn default_steps(self) -> usize {
        match self {
            ScenarioId::UnsyncQueues => 5000,
            ScenarioId::Custom => 10_000,
            _ => 1000,
        }
    }
}

impl FromStr for ScenarioId {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "fig1" => ScenarioId::Fig1,
            "fig2" => ScenarioId::Fig2,
            "fig5" | "two_timescale" => ScenarioId::TwoTimescale,
            "link" => ScenarioId::Link,
            "unsync" | "unsync_queues" => ScenarioId::UnsyncQueues,
            "custom" => ScenarioId::Custom,
            other => return Err(HarnessError::Config(format!("unknown scenario `{other}`"))),
        })
    }
}

/// Output format of emitted tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonlines,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonlines => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonlines" | "jsonl" => Ok(Format::Jsonlines),
            other => Err(HarnessError::Config(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: ScenarioId,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    /// Only `chacha8` is supported.
    pub rng: Option<String>,
}

fn scalar_or_list<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(Option::<OneOrMany>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `toy`, `link` or `unsync` (custom scenarios only).
    pub builtin: Option<String>,
    /// Arrival rate(s): a number or a list.
    #[serde(default, deserialize_with = "scalar_or_list")]
    pub b: Option<Vec<f64>>,
    pub d: Option<u32>,
    /// Fast steps per decision in the two-timescale demo.
    pub hold: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSection {
    pub name: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma1: Option<f64>,
    pub eps_prime: Option<f64>,
    pub s_bar: Option<f64>,
    pub tau_bar: Option<usize>,
    pub clip: Option<f64>,
    /// `mean`, `dither` or `bernoulli`.
    pub arrivals: Option<String>,
    pub sigma2: Option<f64>,
    /// `cyclic` or `full`.
    pub schedule: Option<String>,
    pub rule: Option<String>,
    pub stolyar: Option<bool>,
    pub sigma0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Flat TOML scenario description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub preset: PresetSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioConfig {
    pub fn builtin(id: ScenarioId) -> Self {
        Self {
            scenario: ScenarioSection {
                id,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        if let Some(r) = &cfg.scenario.rng {
            if r != "chacha8" {
                return Err(HarnessError::Config(format!(
                    "unsupported rng `{r}`, expected `chacha8`"
                )));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn steps(&self) -> usize {
        self.scenario.steps.unwrap_or(self.scenario.id.default_steps())
    }

    /// Seeds to run, in order.
    pub fn seeds(&self) -> Vec<u64> {
        match (&self.scenario.seeds, self.scenario.seed) {
            (Some(s), _) if !s.is_empty() => s.clone(),
            (_, Some(s)) => vec![s],
            _ => vec![0],
        }
    }

    pub fn format(&self) -> Format {
        self.output.format.unwrap_or_default()
    }
}

/// A rectangular table of optional numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Renders the table; floats carry 12 significant digits.
    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Csv => {
                out.push_str(&self.columns.join(","));
                out.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(|v| v.map(fmt_num).unwrap_or_default()).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
            }
            Format::Jsonlines => {
                for row in &self.rows {
                    out.push('{');
                    for (i, (c, v)) in self.columns.iter().zip(row).enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        let val = match v {
                            Some(x) if x.is_finite() => fmt_num(*x),
                            _ => "null".to_string(),
                        };
                        let _ = write!(out, "{}:{val}", Value::String(c.clone()));
                    }
                    out.push_str("}\n");
                }
            }
        }
        out
    }
}

/// `v` rounded to 12 significant digits, shortest round-trip form.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:?}")
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Trajectory columns: `k, z*, x*, lambda*, mu*, q_scaled*, f_avg,
/// g_violation_max, bound_lower, bound_upper`.
pub fn trajectory_table(tr: &Trajectory, n: usize, m: usize) -> Table {
    let has_x = tr.steps.iter().any(|s| s.x.is_some());
    let mut cols = vec!["k".to_string()];
    cols.extend(indexed("z", n));
    if has_x {
        cols.extend(indexed("x", n));
    }
    cols.extend(indexed("lambda", m));
    cols.extend(indexed("mu", m));
    cols.extend(indexed("q_scaled", m));
    cols.extend(["f_avg", "g_violation_max", "bound_lower", "bound_upper"].map(String::from));
    let mut t = Table::new(cols);
    for s in &tr.steps {
        let mut row = vec![Some(s.k as f64)];
        row.extend(s.z.iter().copied().map(Some));
        if has_x {
            match &s.x {
                Some(x) => row.extend(x.iter().copied().map(Some)),
                None => row.extend(std::iter::repeat_n(None, n)),
            }
        }
        row.extend(s.lambda.iter().copied().map(Some));
        row.extend(s.mu.iter().copied().map(Some));
        row.extend(s.q_scaled.iter().copied().map(Some));
        row.extend([Some(s.f_avg), Some(s.g_violation_max), s.bound_lower, s.bound_upper]);
        t.push(row);
    }
    t
}

/// Writes `table` to `path`, creating parent directories.
pub fn emit(table: &Table, format: Format, path: &Path) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, table.render(format)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Result of one scenario run for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub id: ScenarioId,
    pub seed: u64,
    /// Named tables; the first one is the main series.
    pub tables: Vec<(String, Table)>,
    pub summary: BTreeMap<String, Value>,
    /// Bound assertions that failed.
    pub failures: Vec<String>,
    pub trajectory: Option<Trajectory>,
}

impl ScenarioOutput {
    fn new(id: ScenarioId, seed: u64) -> Self {
        let mut summary = BTreeMap::new();
        summary.insert("scenario".into(), Value::from(id.name()));
        summary.insert("seed".into(), Value::from(seed));
        summary.insert("rng".into(), Value::from("chacha8"));
        Self {
            id,
            seed,
            tables: Vec::new(),
            summary,
            failures: Vec::new(),
            trajectory: None,
        }
    }

    fn note(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.to_string(), v.into());
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }

    /// Writes every table plus `<id>_seed<seed>_summary.json` into `dir`.
    pub fn write(&self, dir: &Path, format: Format) -> Result<Vec<PathBuf>, HarnessError> {
        let mut paths = Vec::new();
        for (name, t) in &self.tables {
            let p = dir.join(format!("{name}_seed{}.{}", self.seed, format.extension()));
            emit(t, format, &p)?;
            paths.push(p);
        }
        let p = dir.join(format!("{}_seed{}_summary.json", self.id.name(), self.seed));
        let mut text = serde_json::to_string_pretty(&self.summary).expect("plain json");
        text.push('\n');
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        std::fs::write(&p, text).map_err(|source| HarnessError::Io {
            path: p.clone(),
            source,
        })?;
        paths.push(p);
        Ok(paths)
    }
}

fn parse_opt<T: FromStr>(v: &Option<String>, what: &str) -> Result<Option<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    v.as_deref()
        .map(|s| s.parse::<T>().map_err(|e| HarnessError::Config(format!("{what}: {e}"))))
        .transpose()
}

/// Applies the `[preset]` overrides to `base`.
fn apply_preset(mut p: SolverPreset, s: &PresetSection, seed: u64) -> Result<SolverPreset, HarnessError> {
    if let Some(a) = s.alpha {
        p.alpha = a;
    }
    if let Some(b) = s.beta {
        p.beta = b;
    }
    if let Some(c) = s.clip {
        p.clip = Some(c);
    }
    if let Some(s_bar) = s.s_bar {
        p.s_bar = s_bar;
    }
    if let Some(e) = s.eps_prime {
        p.eps_prime = Some(e);
    }
    if let Some(g) = s.gamma {
        p.gamma = g;
    }
    if let Some(g1) = s.gamma1 {
        p.gamma1 = Some(g1);
    }
    if let Some(v) = s.stolyar {
        p.stolyar_form = v;
    }
    if let Some(v) = s.sigma0 {
        p.sigma0 = Some(v);
    }
    if let Some(rule) = parse_opt::<SelectionRule>(&s.rule, "rule")? {
        p.rule = rule;
    }
    if let Some(policy) = parse_opt::<SchedulePolicy>(&s.schedule, "schedule")? {
        p.schedule = policy;
    }
    match s.arrivals.as_deref() {
        None => {}
        Some("mean") => p.arrivals = ArrivalModel::Mean,
        Some("dither") => p.arrivals = ArrivalModel::Dither,
        Some("bernoulli") => {
            let sigma2 = s
                .sigma2
                .ok_or_else(|| HarnessError::Config("bernoulli arrivals need sigma2".into()))?;
            if !(sigma2 > 0.0) {
                return Err(HarnessError::Validation(format!("σ₂ = {sigma2} must be positive")));
            }
            p.arrivals = ArrivalModel::Bernoulli { sigma2 };
        }
        Some(other) => return Err(HarnessError::Config(format!("unknown arrivals `{other}`"))),
    }
    p.seed = seed;
    Ok(p)
}

fn preset_kind(s: &PresetSection, default: PresetKind) -> Result<PresetKind, HarnessError> {
    Ok(parse_opt::<PresetKind>(&s.name, "preset")?.unwrap_or(default))
}

struct Prepared {
    problem: ConvexProblem,
    preset: SolverPreset,
    bounds: Option<BoundContext>,
    lambda_star: Option<Vec<f64>>,
}

fn prepare_link(cfg: &ScenarioConfig, seed: u64) -> Result<Prepared, HarnessError> {
    let b = match cfg.problem.b.as_deref() {
        None => 0.5,
        Some([v]) => *v,
        Some(_) => {
            return Err(HarnessError::Validation(
                "the link takes a single arrival rate b".into(),
            ))
        }
    };
    if !(0.0..1.0).contains(&b) {
        return Err(HarnessError::Validation(format!(
            "arrival rate b = {b} must satisfy 0 ≤ b < 1"
        )));
    }
    let problem = link_problem(b)?;
    let kind = preset_kind(&cfg.preset, PresetKind::UnsyncDiscreteDual)?;
    let tau_bar = cfg.preset.tau_bar.unwrap_or(5);
    let mut base = SolverPreset::from_kind(kind, 0.1, 0.1)
        .with_schedule(SchedulePolicy::Full)
        .with_arrivals(ArrivalModel::Dither);
    if tau_bar > 0 {
        base = base.with_delay(DelayModel {
            tau_bar,
            owner: vec![Some(0), Some(1)],
        });
    }
    let preset = apply_preset(base, &cfg.preset, seed)?;
    let (f_star, lambda_star) = link_optimum(b);
    let slater = SlaterCertificate::new(&problem, vec![(1.0 + b) / 2.0, 1.0])?;
    Ok(Prepared {
        problem,
        preset,
        bounds: Some(BoundContext { f_star, slater }),
        lambda_star: Some(lambda_star),
    })
}

fn prepare_unsync(cfg: &ScenarioConfig, seed: u64) -> Result<Prepared, HarnessError> {
    let b = cfg.problem.b.clone().unwrap_or_else(|| vec![0.5, 1.5]);
    let d = cfg.problem.d.unwrap_or(8);
    if b.is_empty() || d == 0 {
        return Err(HarnessError::Validation("need at least one queue and d ≥ 1".into()));
    }
    if let Some(v) = b.iter().find(|v| !(**v >= 0.0 && **v < f64::from(d))) {
        return Err(HarnessError::Validation(format!(
            "arrival rate {v} is outside [0, d) with d = {d}"
        )));
    }
    let problem = unsync_problem(&b, d)?;
    let kind = preset_kind(&cfg.preset, PresetKind::UnsyncMaxWeight)?;
    let base = SolverPreset::from_kind(kind, 0.05, 0.1).with_arrivals(ArrivalModel::Dither);
    let base = match cfg.preset.tau_bar {
        Some(t) if t > 0 => base.with_delay(DelayModel {
            tau_bar: t,
            owner: (0..b.len()).map(Some).collect(),
        }),
        _ => base,
    };
    let preset = apply_preset(base, &cfg.preset, seed)?;
    let (f_star, lambda_star) = unsync_optimum(&b);
    let z_bar: Vec<f64> = b.iter().map(|v| v + (0.5 * (f64::from(d) - v)).min(0.1)).collect();
    let slater = SlaterCertificate::new(&problem, z_bar)?;
    Ok(Prepared {
        problem,
        preset,
        bounds: Some(BoundContext { f_star, slater }),
        lambda_star: Some(lambda_star),
    })
}

fn prepare_custom(cfg: &ScenarioConfig, seed: u64) -> Result<Prepared, HarnessError> {
    match cfg.problem.builtin.as_deref().unwrap_or("toy") {
        "toy" => {
            let problem = toy_problem();
            let kind = preset_kind(&cfg.preset, PresetKind::ExactDual)?;
            let preset = apply_preset(SolverPreset::from_kind(kind, 0.01, 0.1), &cfg.preset, seed)?;
            let slater = SlaterCertificate::new(&problem, vec![2.0])?;
            Ok(Prepared {
                problem,
                preset,
                bounds: Some(BoundContext { f_star: 1.0, slater }),
                lambda_star: Some(vec![2.0]),
            })
        }
        "link" => prepare_link(cfg, seed),
        "unsync" | "unsync_queues" => prepare_unsync(cfg, seed),
        other => Err(HarnessError::Config(format!("unknown builtin problem `{other}`"))),
    }
}

fn prepare(cfg: &ScenarioConfig, seed: u64) -> Result<Option<Prepared>, HarnessError> {
    Ok(match cfg.scenario.id {
        ScenarioId::Link => Some(prepare_link(cfg, seed)?),
        ScenarioId::UnsyncQueues => Some(prepare_unsync(cfg, seed)?),
        ScenarioId::Custom => Some(prepare_custom(cfg, seed)?),
        _ => None,
    })
}

/// Checks a config without running it: the problem is built, the preset's
/// step-size rules are checked and its certificate constant computed.
pub fn validate(cfg: &ScenarioConfig) -> Result<BTreeMap<String, Value>, HarnessError> {
    let mut out = BTreeMap::new();
    out.insert("scenario".to_string(), Value::from(cfg.scenario.id.name()));
    out.insert("steps".to_string(), Value::from(cfg.steps()));
    out.insert("seeds".to_string(), Value::from(cfg.seeds()));
    if cfg.steps() == 0 {
        return Err(HarnessError::Validation("steps must be positive".into()));
    }
    match cfg.scenario.id {
        ScenarioId::TwoTimescale if cfg.problem.hold == Some(0) => {
            return Err(HarnessError::Validation("hold must be positive".into()))
        }
        _ => {}
    }
    for seed in cfg.seeds() {
        if let Some(p) = prepare(cfg, seed)? {
            let tr = solve(&p.problem, &p.preset, 0, None)?;
            out.insert("preset".to_string(), Value::from(p.preset.kind.to_string()));
            out.insert("sigma0".to_string(), Value::from(tr.sigma0));
            out.insert("g_bar_inf".to_string(), Value::from(tr.g_bar_inf));
            out.insert("g_bar_l2".to_string(), Value::from(tr.g_bar_l2));
        }
    }
    Ok(out)
}

/// Runs the scenario once with `seed`.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, HarnessError> {
    validate_steps(cfg)?;
    match cfg.scenario.id {
        ScenarioId::Fig1 => run_fig1(cfg, seed),
        ScenarioId::Fig2 => run_fig2(cfg, seed),
        ScenarioId::TwoTimescale => run_two_timescale(cfg, seed),
        _ => {
            let p = prepare(cfg, seed)?.expect("solver scenario");
            run_solver_scenario(cfg, seed, p)
        }
    }
}

fn validate_steps(cfg: &ScenarioConfig) -> Result<(), HarnessError> {
    if cfg.steps() == 0 {
        return Err(HarnessError::Validation("steps must be positive".into()));
    }
    Ok(())
}

/// Runs the link scenario (the two-hop network).
pub fn run_link_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, HarnessError> {
    let mut c = cfg.clone();
    c.scenario.id = ScenarioId::Link;
    run_scenario(&c, seed)
}

/// Runs the unsynchronised queues scenario.
pub fn run_unsync_queues_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, HarnessError> {
    let mut c = cfg.clone();
    c.scenario.id = ScenarioId::UnsyncQueues;
    run_scenario(&c, seed)
}

/// Runs one of the figure demos (`fig1`, `fig2`, `two_timescale`).
pub fn run_fig_demos(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, HarnessError> {
    match cfg.scenario.id {
        ScenarioId::Fig1 | ScenarioId::Fig2 | ScenarioId::TwoTimescale => run_scenario(cfg, seed),
        other => Err(HarnessError::Config(format!("`{}` is not a figure demo", other.name()))),
    }
}

fn run_solver_scenario(cfg: &ScenarioConfig, seed: u64, p: Prepared) -> Result<ScenarioOutput, HarnessError> {
    let steps = cfg.steps();
    let tr = solve(&p.problem, &p.preset, steps, p.bounds.as_ref())?;
    let mut out = ScenarioOutput::new(cfg.scenario.id, seed);
    let name = cfg.scenario.id.name();
    out.tables
        .push((name.to_string(), trajectory_table(&tr, p.problem.n(), p.problem.m())));
    out.note("preset", p.preset.kind.to_string());
    out.note("steps", steps);
    out.note("alpha", p.preset.alpha);
    out.note("beta", p.preset.beta);
    out.note("tau_bar", p.preset.delay.as_ref().map_or(0, |d| d.tau_bar));
    out.note("sigma0", tr.sigma0);
    out.note("g_bar_inf", tr.g_bar_inf);
    out.note("g_bar_l2", tr.g_bar_l2);
    out.note("max_scaled_gap", tr.max_scaled_gap);
    out.note("certificate_violations", tr.certificate_violations);
    out.note("eps_max", tr.eps_max);
    let last = tr.last().expect("steps > 0");
    out.note("f_avg", last.f_avg);
    out.note("g_violation_max", last.g_violation_max);
    out.note("z_avg", tr.z_avg.clone());
    out.note("lambda_final", last.lambda.clone());
    out.note("mu_final", last.mu.clone());
    // Multiplier after the last update, i.e. αQ_{K+1}.
    if let Some(x_avg) = &tr.x_avg {
        out.note("x_avg", x_avg.clone());
    }
    if let (Some(b), Some(dev)) = (tr.tracker_bound, tr.tracker_max_deviation) {
        out.note("tracker_bound", b);
        out.note("tracker_max_deviation", dev);
        if dev > b + 1e-9 {
            out.failures
                .push(format!("tracker deviation {dev} exceeds (|D|−1)S̄‖X‖∞ = {b}"));
        }
    }
    out.note("arrival_max_deviation", tr.arrival_max_deviation);
    if tr.certificate_violations > 0 {
        out.failures.push(format!(
            "‖λ_k − μ_k‖∞ ≤ ασ₀ failed at {} steps (max ratio {:.4} vs σ₀ = {:.4})",
            tr.certificate_violations, tr.max_scaled_gap, tr.sigma0
        ));
    }
    if let Some(ctx) = &p.bounds {
        out.note("f_star", ctx.f_star);
        out.note("f_error", last.f_avg - ctx.f_star);
        out.note("window_lower", last.bound_lower.unwrap_or(f64::NAN));
        out.note("window_upper", last.bound_upper.unwrap_or(f64::NAN));
        out.note("window_violations", tr.window_violations);
        out.note("window_violations_inf_norm", tr.window_violations_inf);
        out.note("lambda_bar", tr.lambda_bar.unwrap_or(f64::NAN));
        out.note("multiplier_bound_violations", tr.multiplier_bound_violations);
        if tr.window_violations > 0 {
            out.failures.push(format!(
                "f(z⋄_k) − f* left the approximation window at {} checkpoints after burn-in",
                tr.window_violations
            ));
        }
        if tr.multiplier_bound_violations > 0 {
            out.failures
                .push(format!("‖λ_k‖₂ ≤ λ̄ failed at {} steps", tr.multiplier_bound_violations));
        }
    }
    if let Some(ls) = &p.lambda_star {
        out.note("lambda_star", ls.clone());
        let mu_next = next_multiplier(&tr);
        out.note("mu_distance_to_lambda_star", crate::vecops::dist_inf(&mu_next, ls));
    }
    if cfg.scenario.id == ScenarioId::Link {
        out.note("lambda_star_published", LINK_PUBLISHED_LAMBDA.to_vec());
        out.note("f_star_published", LINK_PUBLISHED_F_STAR);
        out.note(
            "mu_distance_to_published",
            crate::vecops::dist_inf(&next_multiplier(&tr), &LINK_PUBLISHED_LAMBDA),
        );
    }
    out.trajectory = Some(tr);
    Ok(out)
}

/// `μ_K` as held after the final step (the last recorded `μ` is taken before it).
pub fn next_multiplier(tr: &Trajectory) -> Vec<f64> {
    tr.last().map(|s| s.mu.clone()).unwrap_or_default()
}

/// Exact and running-average multipliers for i.i.d. uniform `x_k ∈ {0,1}`,
/// `A = 1`, `b = 0.5`, `α = 1`, `β = 0.1`.
pub fn run_fig1(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, HarnessError> {
    let steps = cfg.steps();
    let alpha = cfg.preset.alpha.unwrap_or(1.0);
    let beta = cfg.preset.beta.unwrap_or(0.1);
    let b = cfg.problem.b.as_ref().and_then(|v| v.first().copied()).unwrap_or(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..steps)
        .map(|_| vec![f64::from(u8::from(rng.random::<bool>()))])
        .collect();
    let bs = vec![vec![b]; steps];
    let series = running_average_pair(&[vec![1.0]], &[b], &xs, &bs, alpha, beta, vec![0.0])?;
    // σ₁ = 2 max_{z∈[0,1]} |z| = 2, σ₂ = 0.
    let bound = 2.0 * alpha * (2.0 / beta);
    let mut t = Table::new(
        ["k", "x", "z", "lambda", "mu", "gap", "bound"]
            .map(String::from)
            .to_vec(),
    );
    let mut worst = 0.0_f64;
    for (k, s) in series.iter().enumerate() {
        worst = worst.max(s.gap);
        t.push(vec![
            Some((k + 1) as f64),
            Some(xs[k][0]),
            Some(s.z[0]),
            Some(s.lambda[0]),
            Some(s.mu[0]),
            Some(s.gap),
            Some(bound),
        ]);
    }
    let mut out = ScenarioOutput::new(ScenarioId::Fig1, seed);
    out.tables.push(("fig1".into(), t));
    out.note("steps", steps);
    out.note("max_gap", worst);
    out.note("bound", bound);
    if worst > bound {
        out.failures
            .push(format!("|λ_k − μ_k| = {worst} exceeds 2mα(σ₁/β + σ₂) = {bound}"));
    }
    Ok(out)
}

/// State of the paired running-average / queue recursion before step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStep {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// `‖λ_k − μ_k‖₂`
    pub gap: f64,
}

/// `z_{k+1} = (1−β) z_k + β x_k`, `λ_{k+1} = [λ_k + α(A z_{k+1} − b)]⁺`,
/// `μ_{k+1} = [μ_k + α(A x_k − b_k)]⁺`, from `λ₁ = μ₁ = 0`.
#[allow(clippy::too_many_arguments)]
pub fn running_average_pair(
    a: &[Vec<f64>],
    b: &[f64],
    xs: &[Vec<f64>],
    bs: &[Vec<f64>],
    alpha: f64,
    beta: f64,
    z1: Vec<f64>,
) -> Result<Vec<PairStep>, HarnessError> {
    let m = b.len();
    if a.len() != m || xs.len() != bs.len() {
        return Err(HarnessError::Config("mismatched dimensions".into()));
    }
    let mut z = z1;
    let (mut lambda, mut mu) = (vec![0.0; m], vec![0.0; m]);
    let mut out = Vec::with_capacity(xs.len());
    for (x, bk) in xs.iter().zip(bs) {
        out.push(PairStep {
            z: z.clone(),
            lambda: lambda.clone(),
            mu: mu.clone(),
            gap: crate::vecops::dist2(&lambda, &mu),
        });
        z = running_average_step(&z, x, beta)?;
        let inc_l: Vec<f64> = crate::vecops::sub(&crate::vecops::mat_vec(a, &z), b)
            .iter()
            .map(|v| alpha * v)
            .collect();
        let inc_m: Vec<f64> = crate::vecops::sub(&crate::vecops::mat_vec(a, x), bk)
            .iter()
            .map(|v| alpha * v)
            .collect();
        lambda = queue_update(&lambda, &inc_l, None);
        mu = queue_update(&mu, &inc_m, None);
    }
    Ok(out)
}

/// Tracker on `z_k = 0.75/k + 0.25`, `D = {0,1}`.
pub fn run_fig2(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, HarnessError> {
    let steps = cfg.steps();
    let z: Vec<Vec<f64>> = (1..=steps).map(|k| vec![0.75 / k as f64 + 0.25]).collect();
    let mut tracker = Tracker::new(ActionSet::integer_grid(1, 0, 1)?);
    let report = crate::tracker::track_sequence(z.iter().map(Vec::as_slice), &mut tracker)?;
    let mut out = ScenarioOutput::new(ScenarioId::Fig2, seed);
    out.tables
        .push(("fig2".into(), tracking_table(&z, &report, tracker.actions())));
    out.note("steps", steps);
    out.note("max_deviation", report.max_deviation);
    out.note("bound", report.bound);
    if report.max_deviation > report.bound + 1e-9 {
        out.failures.push(format!(
            "‖Σ(z − x)‖∞ = {} exceeds (|D|−1)S̄‖X‖∞ = {}",
            report.max_deviation, report.bound
        ));
    }
    Ok(out)
}

fn tracking_table(z: &[Vec<f64>], report: &crate::tracker::TrackReport, d: &ActionSet) -> Table {
    let mut t = Table::new(["k", "z", "x", "deviation", "bound"].map(String::from).to_vec());
    for (k, ((zk, x), dev)) in z.iter().zip(report.actions(d)).zip(&report.deviation).enumerate() {
        t.push(vec![
            Some((k + 1) as f64),
            Some(zk[0]),
            Some(x[0]),
            Some(*dev),
            Some(report.bound),
        ]);
    }
    t
}

/// Decisions drawn uniformly from `[0,1]` every `hold` slots, actions every slot.
pub fn run_two_timescale(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, HarnessError> {
    let steps = cfg.steps();
    let hold = cfg.problem.hold.unwrap_or(10);
    if hold == 0 {
        return Err(HarnessError::Validation("hold must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slow: Vec<Vec<f64>> = (0..steps.div_ceil(hold)).map(|_| vec![rng.random::<f64>()]).collect();
    let mut tracker = Tracker::new(ActionSet::integer_grid(1, 0, 1)?);
    let report = two_timescale_track(slow.iter().map(Vec::as_slice), hold, &mut tracker)?;
    let fast: Vec<Vec<f64>> = slow
        .iter()
        .flat_map(|z| std::iter::repeat_n(z.clone(), hold))
        .take(steps)
        .collect();
    let mut report = report;
    report.indices.truncate(steps);
    report.deviation.truncate(steps);
    report.max_deviation = report.deviation.iter().copied().fold(0.0, f64::max);
    let mut out = ScenarioOutput::new(ScenarioId::TwoTimescale, seed);
    out.tables.push((
        "two_timescale".into(),
        tracking_table(&fast, &report, tracker.actions()),
    ));
    out.note("steps", steps);
    out.note("hold", hold);
    out.note("max_deviation", report.max_deviation);
    out.note("bound", report.bound);
    if report.max_deviation > report.bound + 1e-9 {
        out.failures.push(format!(
            "‖Σ(z − x)‖∞ = {} exceeds (|D|−1)S̄‖X‖∞ = {}",
            report.max_deviation, report.bound
        ));
    }
    Ok(out)
}

/// Reference optimum for the config's problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub primal: f64,
    pub dual: f64,
    pub lambda: Vec<f64>,
    pub analytic_f_star: Option<f64>,
    pub analytic_lambda: Option<Vec<f64>>,
}

/// Long-horizon exact dual run plus dual refinement.
pub fn oracle(cfg: &ScenarioConfig, steps: usize) -> Result<OracleReport, HarnessError> {
    let p = prepare(cfg, 0)?
        .ok_or_else(|| HarnessError::Config(format!("`{}` has no optimisation problem", cfg.scenario.id.name())))?;
    let est = estimate_f_star(&p.problem, steps)?;
    Ok(OracleReport {
        primal: est.primal,
        dual: est.dual,
        lambda: est.lambda,
        analytic_f_star: p.bounds.map(|b| b.f_star),
        analytic_lambda: p.lambda_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_optimum_matches_closed_form() {
        let (f, l) = link_optimum(0.5);
        let e = 0.5_f64.exp();
        assert!((f - (0.5 + e)).abs() < 1e-15);
        assert!((l[0] - (1.0 + e)).abs() < 1e-15 && (l[1] - e).abs() < 1e-15);
        let p = link_problem(0.5).unwrap();
        assert!((p.objective(&[0.5, 0.5]) - f).abs() < 1e-15);
        assert_eq!(p.constraint_values(&[0.5, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn link_blocks_sum_to_whole() {
        let p = link_problem(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(p.separability().unwrap().separability_residual(&p, &mut rng, 200) < 1e-12);
        let q = unsync_problem(&[0.5, 1.5], 8).unwrap();
        assert!(q.separability().unwrap().separability_residual(&q, &mut rng, 200) < 1e-12);
    }

    #[test]
    fn number_format_has_twelve_digits() {
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(2.0), "2.0");
        assert_eq!(fmt_num(-0.0), "0.0");
        assert_eq!(fmt_num(123_456_789.123_456_79), "123456789.123");
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(vec!["k".into(), "z1".into()]);
        assert_eq!(t.render(Format::Csv), "k,z1\n");
        assert_eq!(t.render(Format::Jsonlines), "");
    }

    #[test]
    fn jsonl_rows_keep_column_order() {
        let mut t = Table::new(vec!["k".into(), "b".into(), "a".into()]);
        t.push(vec![Some(1.0), None, Some(0.25)]);
        assert_eq!(t.render(Format::Jsonlines), "{\"k\":1.0,\"b\":null,\"a\":0.25}\n");
    }

    #[test]
    fn config_parses_flat_sections() {
        let cfg = ScenarioConfig::from_toml(
            r#"
            [scenario]
            id = "unsync"
            steps = 200
            seeds = [1, 2]
            rng = "chacha8"

            [problem]
            b = [0.5, 1.5]
            d = 8

            [preset]
            alpha = 0.05
            beta = 0.1
            arrivals = "dither"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scenario.id, ScenarioId::UnsyncQueues);
        assert_eq!(cfg.seeds(), vec![1, 2]);
        assert!(ScenarioConfig::from_toml("[scenario]\nid = \"link\"\nrng = \"mt\"\n").is_err());
        assert!(ScenarioConfig::from_toml("[scenario]\nid = \"link\"\n[preset]\nnested = { a = 1 }\n").is_err());
        let link = ScenarioConfig::from_toml("[scenario]\nid = \"link\"\n[problem]\nb = 0.5\n").unwrap();
        assert_eq!(link.problem.b, Some(vec![0.5]));
    }

    #[test]
    fn unsync_rejects_rates_outside_range() {
        let mut cfg = ScenarioConfig::builtin(ScenarioId::UnsyncQueues);
        cfg.problem.b = Some(vec![9.0, 0.5]);
        assert!(matches!(validate(&cfg), Err(HarnessError::Validation(_))));
    }

    #[test]
    fn fig_demos_stay_within_bounds() {
        for id in [ScenarioId::Fig1, ScenarioId::Fig2, ScenarioId::TwoTimescale] {
            let out = run_scenario(&ScenarioConfig::builtin(id), 3).unwrap();
            assert!(out.failures.is_empty(), "{id:?}: {:?}", out.failures);
            assert_eq!(out.tables[0].1.rows.len(), 1000);
        }
        let fig2 = run_scenario(&ScenarioConfig::builtin(ScenarioId::Fig2), 0).unwrap();
        assert!(fig2.number("max_deviation").unwrap() <= 1.0);
    }

    #[test]
    fn three_step_run_has_four_lines() {
        let mut cfg = ScenarioConfig::builtin(ScenarioId::Custom);
        cfg.scenario.steps = Some(3);
        let out = run_scenario(&cfg, 0).unwrap();
        assert_eq!(out.tables[0].1.render(Format::Csv).lines().count(), 4);
    }
}
