use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use pullback_optim::harness::{
    self, HyperGrid, RunConfig, RunRecord, Search, SweepSpec, TaskKind, TaskSpec, LOWDIM_OPTIMIZERS,
    NN_OPTIMIZERS,
};
use pullback_optim::landscapes::{Landscape, LandscapeId};
use pullback_optim::optim::{HyperParams, OptimizerConfig, OptimizerKind};
use pullback_optim::{selftest, Error, ParamVector, Result};

#[derive(Parser)]
#[command(name = "pullback-optim", version, about = "Induced-metric optimizers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimizer on a 2-D test landscape and print the record as JSON.
    BenchLowdim(RunArgs),
    /// Train the MLP on a synthetic task and print the record as JSON.
    TrainNn(RunArgs),
    /// Run a hyperparameter sweep and write records, traces and a summary.
    Sweep(SweepArgs),
    /// Summarize a records file written by `sweep`.
    Summarize(SummarizeArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args, Default)]
struct Hyper {
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

impl Hyper {
    fn apply(&self, h: &mut HyperParams) {
        let pairs = [
            (self.eta, &mut h.eta),
            (self.mu, &mut h.mu),
            (self.xi, &mut h.xi),
            (self.beta, &mut h.beta),
            (self.lambda, &mut h.lambda),
            (self.beta2, &mut h.beta2),
            (self.epsilon, &mut h.epsilon),
        ];
        for (flag, slot) in pairs {
            if let Some(v) = flag {
                *slot = v;
            }
        }
    }
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    landscape: Option<String>,
    /// poly-regression or blobs
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Loss offset for landscape runs.
    #[arg(long)]
    offset: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    optimizer: Option<String>,
    /// Landscape start point, e.g. `--start=-1.2,1`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// Leave the per-step trace out of the record.
    #[arg(long)]
    no_trace: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    /// Optimizers to include (comma separated); defaults to the standard set.
    #[arg(long, value_delimiter = ',')]
    optimizer: Option<Vec<String>>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Runs per optimizer entering the summary.
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    /// Keep per-step traces.
    #[arg(long)]
    traces: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Records file (newline-delimited JSON).
    input: PathBuf,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::invalid("config", format!("cannot read {}: {e}", path.display()))
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn parse_landscape(s: &str) -> Result<LandscapeId> {
    s.parse()
}

fn apply_problem(c: &Common, cfg: &mut RunConfig) -> Result<()> {
    if let Some(l) = &c.landscape {
        cfg.landscape = Some(parse_landscape(l)?);
        cfg.task = None;
    }
    if let Some(t) = &c.task {
        let kind: TaskKind = t.parse()?;
        if cfg.task.as_ref().map(|t| t.kind) != Some(kind) {
            cfg.task = Some(TaskSpec::new(kind));
        }
        cfg.landscape = None;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = c.tol {
        cfg.tol = v;
    }
    if let Some(v) = c.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = c.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = c.offset {
        cfg.offset = Some(v);
    }
    Ok(())
}

fn problem_dim(cfg: &RunConfig) -> Result<usize> {
    match (&cfg.landscape, &cfg.task) {
        (Some(id), _) => Ok(Landscape::new(*id).dim()),
        (None, Some(task)) => Ok(task.mlp()?.num_params()),
        (None, None) => Err(Error::invalid("landscape", "give --landscape, --task or --config")),
    }
}

fn build_run_config(args: &RunArgs, want_task: bool) -> Result<RunConfig> {
    let c = &args.common;
    let mut cfg = match &c.config {
        Some(path) => read_config::<RunConfig>(path)?,
        None => {
            let name = args.optimizer.as_deref().ok_or_else(|| {
                Error::invalid(
                    "optimizer",
                    format!("required; valid kinds: {}", OptimizerKind::valid_names()),
                )
            })?;
            let kind: OptimizerKind = name.parse()?;
            let mut cfg = RunConfig::lowdim(
                LandscapeId::Rosenbrock,
                OptimizerConfig {
                    kind,
                    hyper: HyperParams::default(),
                },
            );
            cfg.landscape = None;
            apply_problem(c, &mut cfg)?;
            cfg.optimizer.hyper = HyperParams::for_dimension(problem_dim(&cfg)?);
            cfg
        }
    };
    if c.config.is_some() {
        if let Some(name) = &args.optimizer {
            cfg.optimizer.kind = name.parse()?;
        }
        apply_problem(c, &mut cfg)?;
    }
    if let Some(start) = &args.start {
        cfg.start = Some(ParamVector::new(start.clone())?);
    }
    if args.no_trace {
        cfg.keep_trace = false;
    }
    c.hyper.apply(&mut cfg.optimizer.hyper);
    if want_task && cfg.task.is_none() {
        return Err(Error::invalid("task", "train-nn needs --task or a config with a task"));
    }
    if !want_task && cfg.landscape.is_none() {
        return Err(Error::invalid(
            "landscape",
            "bench-lowdim needs --landscape or a config with a landscape",
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_run_outputs(dir: &Path, rec: &RunRecord) -> Result<()> {
    ensure_dir(dir)?;
    harness::write_records_ndjson(std::slice::from_ref(rec), BufWriter::new(File::create(dir.join("records.ndjson"))?))?;
    harness::write_trace_csv(std::slice::from_ref(rec), BufWriter::new(File::create(dir.join("traces.csv"))?))?;
    Ok(())
}

fn run_single(args: RunArgs, want_task: bool) -> Result<()> {
    let cfg = build_run_config(&args, want_task)?;
    let rec = if want_task {
        harness::run_nn(&cfg)?
    } else {
        harness::run_lowdim(&cfg)?
    };
    if let Some(dir) = &args.common.out {
        write_run_outputs(dir, &rec)?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer(&mut out, &rec)?;
    writeln!(out)?;
    Ok(())
}

/// A hyperparameter given on the command line is fixed for the whole sweep.
fn pin<T>(grid: &mut HyperGrid<T>, hyper: &Hyper) {
    if hyper.eta.is_some() {
        grid.eta = None;
    }
    if hyper.mu.is_some() {
        grid.mu = None;
    }
    if hyper.xi.is_some() {
        grid.xi = None;
    }
    if hyper.beta.is_some() {
        grid.beta = None;
    }
    if hyper.lambda.is_some() {
        grid.lambda = None;
    }
    if hyper.beta2.is_some() {
        grid.beta2 = None;
    }
    if hyper.epsilon.is_some() {
        grid.epsilon = None;
    }
}

fn pin_axes(spec: &mut SweepSpec, hyper: &Hyper) {
    match &mut spec.search {
        Search::Grid(g) => pin(g, hyper),
        Search::Random { ranges, .. } => pin(ranges, hyper),
    }
    hyper.apply(&mut spec.base.optimizer.hyper);
}

fn build_sweep(args: &SweepArgs) -> Result<SweepSpec> {
    let c = &args.common;
    let mut spec = match &c.config {
        Some(path) => read_config::<SweepSpec>(path)?,
        None => match (&c.landscape, &c.task) {
            (Some(l), None) => harness::lowdim_sweep(parse_landscape(l)?, &LOWDIM_OPTIMIZERS),
            (None, Some(t)) => {
                let kind: TaskKind = t.parse()?;
                let mut spec = harness::regression_sweep(0, &NN_OPTIMIZERS);
                spec.base.task = Some(TaskSpec::new(kind));
                spec
            }
            _ => {
                return Err(Error::invalid(
                    "landscape",
                    "give exactly one of --landscape or --task, or a --config",
                ))
            }
        },
    };
    apply_problem(c, &mut spec.base)?;
    if let Some(names) = &args.optimizer {
        spec.optimizers = names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<OptimizerKind>>>()?;
    }
    if args.traces {
        spec.keep_traces = true;
    }
    pin_axes(&mut spec, &c.hyper);
    if args.parallelism == 0 {
        return Err(Error::invalid("parallelism", "must be >= 1"));
    }
    spec.validate()?;
    Ok(spec)
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let spec = build_sweep(&args)?;
    let dir = args.common.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    ensure_dir(&dir)?;
    let records = harness::sweep(&spec, args.parallelism)?;
    harness::write_records_ndjson(&records, BufWriter::new(File::create(dir.join("records.ndjson"))?))?;
    harness::write_trace_csv(&records, BufWriter::new(File::create(dir.join("traces.csv"))?))?;
    let rows = harness::summarize(&records, args.top_k)?;
    harness::write_summary_csv(&rows, BufWriter::new(File::create(dir.join("summary.csv"))?))?;
    harness::write_summary_csv(&rows, io::stdout().lock())?;
    Ok(())
}

fn run_summarize(args: SummarizeArgs) -> Result<()> {
    let file = File::open(&args.input).map_err(|e| {
        Error::invalid("input", format!("cannot read {}: {e}", args.input.display()))
    })?;
    let records = harness::read_records_ndjson(BufReader::new(file))?;
    let rows = harness::summarize(&records, args.top_k)?;
    match &args.out {
        Some(path) => harness::write_summary_csv(&rows, BufWriter::new(File::create(path)?)),
        None => harness::write_summary_csv(&rows, io::stdout().lock()),
    }
}

/// Returns whether every check passed.
fn run_selftest() -> Result<bool> {
    let checks = selftest::run_all()?;
    let mut all = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::BenchLowdim(a) => run_single(a, false),
        Command::TrainNn(a) => run_single(a, true),
        Command::Sweep(a) => run_sweep(a),
        Command::Summarize(a) => run_summarize(a),
        Command::Selftest => match run_selftest() {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
