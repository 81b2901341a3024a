use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dualq_core::harness::{self, Format, HarnessError, ScenarioConfig, ScenarioId, ScenarioOutput};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

macro_rules! say {
    ($($t:tt)*) => {
        writeln!(std::io::stdout(), $($t)*).map_err(anyhow::Error::from)?
    };
}

#[derive(Parser)]
#[command(
    name = "dualq",
    version,
    about = "Descent with approximate multipliers: scenarios and demos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the number of steps K.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Run a single seed instead of the configured ones.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Exit with status 3 if any bound assertion fails.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config.
    Run { config: PathBuf },
    /// Run a built-in scenario with its default parameters.
    Demo { name: Demo },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Long-horizon estimate of f* and λ* for the config's problem.
    Oracle { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    Fig1,
    Fig2,
    Fig5,
    Link,
    Unsync,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonlines,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonlines => Format::Jsonlines,
        }
    }
}

impl Demo {
    fn id(self) -> ScenarioId {
        match self {
            Demo::Fig1 => ScenarioId::Fig1,
            Demo::Fig2 => ScenarioId::Fig2,
            Demo::Fig5 => ScenarioId::TwoTimescale,
            Demo::Link => ScenarioId::Link,
            Demo::Unsync => ScenarioId::UnsyncQueues,
        }
    }
}

enum Failure {
    Validation(anyhow::Error),
    Bounds(usize),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let validation = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<HarnessError>(),
                Some(HarnessError::Config(_) | HarnessError::Validation(_) | HarnessError::Parse(_))
            )
        });
        if validation {
            Failure::Validation(e)
        } else {
            Failure::Other(e)
        }
    }
}

fn load(path: &Path, cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    apply_overrides(&mut cfg, cli);
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ScenarioConfig, cli: &Cli) {
    if let Some(k) = cli.steps {
        cfg.scenario.steps = Some(k);
    }
    if let Some(s) = cli.seed {
        cfg.scenario.seed = Some(s);
        cfg.scenario.seeds = None;
    }
    if let Some(d) = &cli.out {
        cfg.output.dir = Some(d.clone());
    }
    if let Some(f) = cli.format {
        cfg.output.format = Some(f.into());
    }
}

fn run_all(cfg: &ScenarioConfig) -> Result<usize> {
    let seeds = cfg.seeds();
    let outputs: Vec<Result<ScenarioOutput, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| s.spawn(move || harness::run_scenario(cfg, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let format = cfg.format();
    let mut failures = 0;
    for out in outputs {
        let out = out?;
        let paths = out
            .write(&dir, format)
            .with_context(|| format!("writing to {}", dir.display()))?;
        for p in &paths {
            log::info!("wrote {}", p.display());
        }
        say!(
            "{} seed {}: {} files in {}",
            out.id.name(),
            out.seed,
            paths.len(),
            dir.display()
        );
        for key in [
            "f_avg",
            "f_star",
            "f_error",
            "g_violation_max",
            "max_scaled_gap",
            "sigma0",
        ] {
            if let Some(v) = out.number(key) {
                say!("  {key} = {}", harness::fmt_num(v));
            }
        }
        for f in &out.failures {
            say!("  bound failure: {f}");
        }
        failures += out.failures.len();
    }
    Ok(failures)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, cli)?;
            let failures = run_all(&cfg)?;
            if cli.strict && failures > 0 {
                return Err(Failure::Bounds(failures));
            }
        }
        Command::Demo { name } => {
            let mut cfg = ScenarioConfig::builtin(name.id());
            apply_overrides(&mut cfg, cli);
            let failures = run_all(&cfg)?;
            if cli.strict && failures > 0 {
                return Err(Failure::Bounds(failures));
            }
        }
        Command::Validate { config } => {
            let cfg = load(config, cli)?;
            let report = harness::validate(&cfg).context("validation failed")?;
            say!("{}", render_report(&report));
        }
        Command::Oracle { config } => {
            let cfg = load(config, cli)?;
            let steps = cli.steps.unwrap_or(200_000);
            let r = harness::oracle(&cfg, steps).context("oracle failed")?;
            say!("primal f(z) = {}", harness::fmt_num(r.primal));
            say!("dual d(λ) = {}", harness::fmt_num(r.dual));
            say!("λ = {}", join(&r.lambda));
            if let Some(f) = r.analytic_f_star {
                say!("analytic f* = {}", harness::fmt_num(f));
            }
            if let Some(l) = &r.analytic_lambda {
                say!("analytic λ* = {}", join(l));
            }
        }
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| harness::fmt_num(*x)).collect::<Vec<_>>().join(", ")
}

fn render_report<V: std::fmt::Display>(map: &std::collections::BTreeMap<String, V>) -> String {
    map.iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Bounds(n)) => {
            eprintln!("error: {n} bound assertion(s) failed");
            ExitCode::from(3)
        }
        Err(Failure::Other(e))
            if e.downcast_ref::<std::io::Error>().map(|io| io.kind()) == Some(std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
