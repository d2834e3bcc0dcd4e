mod commands;
mod config;
mod error;
mod predictions;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cnsl_core::baselines::LpsiRule;
use cnsl_core::diffusion::parse_pattern;
use cnsl_core::model::{Objective, SeedRule};

use commands::Method;
use config::{resolve, DataKind, Overrides, RunConfig};
use error::{CliError, CliResult};

/// Cross-network diffusion simulation and seed localization.
#[derive(Debug, Parser)]
#[command(name = "cnsl", version)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "CNSL_THREADS")]
    threads: Option<usize>,

    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Global seed every stage seed derives from.
    #[arg(long)]
    seed: Option<u64>,

    /// Arbitrary override such as `train.lambda=0.5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> CliResult<Overrides> {
        let mut o = Overrides::default();
        for s in &self.set {
            o.push_assignment(s)?;
        }
        if let Some(s) = self.seed {
            o.set("seed", int(s)?);
        }
        Ok(o)
    }

    fn resolve(&self, o: Overrides) -> CliResult<RunConfig> {
        if let Some(p) = &self.config {
            if !p.is_file() {
                return Err(CliError::Usage(format!("config file {} does not exist", p.display())));
            }
        }
        resolve(self.config.as_deref(), &o)
    }
}

fn int(v: impl TryInto<i64>) -> CliResult<toml::Value> {
    v.try_into()
        .map(toml::Value::Integer)
        .map_err(|_| CliError::Usage("integer flag value too large".into()))
}

fn to_toml<T: serde::Serialize>(v: &T) -> CliResult<toml::Value> {
    toml::Value::try_from(v).map_err(|e| CliError::Runtime(format!("encoding override: {e}")))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a cross-network dataset (synthetic diffusion or agent simulation).
    SimulateData(SimulateArgs),
    /// Train the localization model on a dataset's training split.
    Train(TrainArgs),
    /// Localize seeds for every held-out case with a trained model.
    Infer(InferArgs),
    /// Rule-based baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Tabulate metrics over prediction directories.
    Evaluate(EvaluateArgs),
    /// Train, infer and tabulate every method on every dataset with timings.
    Benchmark(BenchmarkArgs),
    /// Check a config file, dataset and/or checkpoint without running anything.
    Validate(ValidateArgs),
    /// Agent-based simulation tools.
    #[command(subcommand)]
    Agentsim(AgentsimCommand),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    kind: Option<DataKind>,
    /// Source and target diffusion models, e.g. `lt2ic`.
    #[arg(long)]
    diffusion: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long)]
    seed_fraction: Option<f64>,
    /// Agent datasets: `D0` (initial sources) or `D1` (plus day-one infections).
    #[arg(long)]
    seed_mode: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_vae: Option<f64>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file, or a training output directory holding `model.ckpt`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Latent descent steps.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `observed` or `spread-max`.
    #[arg(long)]
    objective: Option<String>,
    /// `expected`, `top:<m>` or `threshold:<t>`.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    seed_weight: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Label-propagation source identification across the bridges.
    Lpsi(LpsiArgs),
}

#[derive(Debug, Args)]
struct LpsiArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    /// `local-maxima` or `top:<m>`.
    #[arg(long)]
    rule: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Prediction directories, or parents searched for them.
    #[arg(long, required = true, num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Cnsl, Method::Lpsi])]
    methods: Vec<Method>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum AgentsimCommand {
    /// Sweep transmission rates and report how often the spread lands in band.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Rate pairs `p_coloc:p_social`, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_lpsi_rule(s: &str) -> CliResult<LpsiRule> {
    match s.split_once(':') {
        None if s == "local-maxima" => Ok(LpsiRule::LocalMaxima),
        Some(("top", m)) => m
            .parse()
            .map(LpsiRule::TopM)
            .map_err(|_| CliError::Usage(format!("bad LPSI rule '{s}'"))),
        _ => Err(CliError::Usage(format!("bad LPSI rule '{s}' (local-maxima or top:<m>)"))),
    }
}

fn parse_grid(items: &[String]) -> CliResult<Vec<toml::Value>> {
    items
        .iter()
        .map(|item| {
            let bad = || CliError::Usage(format!("grid point '{item}' must look like 0.05:0.025"));
            let (c, s) = item.split_once(':').ok_or_else(bad)?;
            let c: f64 = c.trim().parse().map_err(|_| bad())?;
            let s: f64 = s.trim().parse().map_err(|_| bad())?;
            Ok(toml::Value::Array(vec![c.into(), s.into()]))
        })
        .collect()
}

fn snapshot(cfg: &RunConfig, out: &Path, command: &str) -> CliResult<()> {
    cfg.write_snapshot(out, command)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SimulateData(a) => {
            let mut o = a.common.overrides()?;
            if let Some(k) = a.kind {
                o.set("data.kind", to_toml(&k)?);
            }
            if let Some(p) = &a.diffusion {
                let (s, t) = parse_pattern(p)?;
                o.set("source.model", to_toml(&s)?);
                o.set("target.model", to_toml(&t)?);
            }
            o.set_opt("data.samples", a.samples.map(int).transpose()?);
            o.set_opt("data.test_samples", a.test_samples.map(int).transpose()?);
            o.set_opt("data.seed_fraction", a.seed_fraction);
            if let Some(m) = &a.seed_mode {
                let mode: cnsl_core::agentsim::SeedMode = m.parse()?;
                o.set("data.seed_mode", to_toml(&mode)?);
            }
            let cfg = a.common.resolve(o)?;
            commands::simulate_data(&cfg, &a.out)?;
            snapshot(&cfg, &a.out, "simulate-data")
        }
        Command::Train(a) => {
            let mut o = a.common.overrides()?;
            o.set_opt("train.epochs", a.epochs.map(int).transpose()?);
            o.set_opt("train.batch_size", a.batch_size.map(int).transpose()?);
            o.set_opt("train.lr_vae", a.lr_vae);
            let cfg = a.common.resolve(o)?;
            commands::train_model(&cfg, &a.data, &a.out)?;
            snapshot(&cfg, &a.out, "train")
        }
        Command::Infer(a) => {
            let mut o = a.common.overrides()?;
            o.set_opt("infer.iterations", a.iterations.map(int).transpose()?);
            o.set_opt("infer.alpha", a.alpha);
            if let Some(obj) = &a.objective {
                o.set("infer.objective", to_toml(&obj.parse::<Objective>()?)?);
            }
            if let Some(r) = &a.rule {
                o.set("infer.rule", to_toml(&r.parse::<SeedRule>()?)?);
            }
            o.set_opt("infer.k", a.k.map(int).transpose()?);
            o.set_opt("infer.restarts", a.restarts.map(int).transpose()?);
            o.set_opt("infer.ensemble", a.ensemble.map(int).transpose()?);
            o.set_opt("infer.seed_weight", a.seed_weight);
            let cfg = a.common.resolve(o)?;
            commands::infer(&cfg, &a.data, &a.model, &a.out)?;
            snapshot(&cfg, &a.out, "infer")
        }
        Command::Baseline(BaselineCommand::Lpsi(a)) => {
            let mut o = a.common.overrides()?;
            o.set_opt("lpsi.alpha", a.alpha);
            if let Some(r) = &a.rule {
                o.set("lpsi.rule", to_toml(&parse_lpsi_rule(r)?)?);
            }
            let cfg = a.common.resolve(o)?;
            commands::lpsi(&cfg, &a.data, &a.out)?;
            snapshot(&cfg, &a.out, "baseline lpsi")
        }
        Command::Evaluate(a) => {
            let cfg = a.common.resolve(a.common.overrides()?)?;
            commands::evaluate(&a.predictions, &a.out)?;
            snapshot(&cfg, &a.out, "evaluate")
        }
        Command::Benchmark(a) => {
            let mut o = a.common.overrides()?;
            o.set_opt("train.epochs", a.epochs.map(int).transpose()?);
            let cfg = a.common.resolve(o)?;
            commands::benchmark(&cfg, &a.data, &a.methods, &a.out)?;
            snapshot(&cfg, &a.out, "benchmark")
        }
        Command::Validate(a) => {
            let cfg = a.common.resolve(a.common.overrides()?)?;
            commands::validate(&cfg, a.data.as_deref(), a.model.as_deref())
        }
        Command::Agentsim(AgentsimCommand::Calibrate(a)) => {
            let mut o = a.common.overrides()?;
            if !a.grid.is_empty() {
                o.set("calibrate.grid", toml::Value::Array(parse_grid(&a.grid)?));
            }
            o.set_opt("calibrate.episodes", a.episodes.map(int).transpose()?);
            let cfg = a.common.resolve(o)?;
            commands::agentsim_calibrate(&cfg, &a.out)?;
            snapshot(&cfg, &a.out, "agentsim calibrate")
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
