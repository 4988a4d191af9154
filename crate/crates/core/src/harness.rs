//! Run loop, sweeps, result records and summary tables.
//!
//! Every run is a pure function of its [`RunConfig`]; sweeps enumerate their
//! configurations in a fixed order and collect results in that order, so the
//! output does not depend on how many worker threads executed them. Wall-time
//! fields are the only nondeterministic part of a [`RunRecord`].

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscapes::{offset_loss, Landscape, LandscapeId};
use crate::nn::{self, Batch, MlpSpec};
use crate::numcore::{ParamVector, RngStream};
use crate::optim::{HyperParams, Optimizer, OptimizerConfig, OptimizerKind};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: u64 = 100_000;
pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_BATCH_SIZE: usize = 256;
/// Offset added to zero-minimum landscapes for the log-loss embedding.
pub const DEFAULT_LOG_OFFSET: f64 = 1e-3;
/// Losses above this (or non-finite) mark a run as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;
/// Environment variable capping the sweep worker count.
pub const THREADS_ENV: &str = "PULLBACK_OPTIM_THREADS";

/// NaN and infinities travel through JSON as `null`.
mod lossy_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    PolyRegression,
    Blobs,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::PolyRegression, TaskKind::Blobs];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::PolyRegression => "poly-regression",
            TaskKind::Blobs => "blobs",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|k| k.name() == key).ok_or_else(|| {
            let valid: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(
                "task",
                format!("unknown task `{s}`; valid tasks: {}", valid.join(", ")),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Total samples, split 80/20 into train and validation.
    #[serde(default = "TaskSpec::default_samples")]
    pub samples: usize,
    /// Polynomial degree (regression).
    #[serde(default = "TaskSpec::default_degree")]
    pub degree: u32,
    /// Number of clusters (classification).
    #[serde(default = "TaskSpec::default_classes")]
    pub classes: usize,
    /// Layer widths; defaults to `[4, 64, 64, 1]` or `[2, 32, 32, classes]`.
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
}

impl TaskSpec {
    fn default_samples() -> usize {
        2560
    }
    fn default_degree() -> u32 {
        6
    }
    fn default_classes() -> usize {
        3
    }

    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            samples: Self::default_samples(),
            degree: Self::default_degree(),
            classes: Self::default_classes(),
            widths: None,
        }
    }

    pub fn mlp(&self) -> Result<MlpSpec> {
        match self.kind {
            TaskKind::PolyRegression => {
                MlpSpec::regression(self.widths.clone().unwrap_or_else(|| vec![4, 64, 64, 1]))
            }
            TaskKind::Blobs => MlpSpec::classification(
                self.widths
                    .clone()
                    .unwrap_or_else(|| vec![2, 32, 32, self.classes]),
            ),
        }
    }

    /// Train and validation splits; the same seed always yields the same data.
    pub fn generate(&self, seed: u64) -> Result<(Batch, Batch)> {
        let mut rng = RngStream::new(seed).substream(1);
        match self.kind {
            TaskKind::PolyRegression => {
                let task = nn::PolyTask::random(self.degree, &mut rng);
                nn::gen_poly_data(&task, self.samples, &mut rng)
            }
            TaskKind::Blobs => nn::gen_blobs_classification(self.classes, self.samples, &mut rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub landscape: Option<LandscapeId>,
    /// Loss offset for landscapes; log-loss runs default to
    /// [`DEFAULT_LOG_OFFSET`].
    #[serde(default)]
    pub offset: Option<f64>,
    /// Landscape start point; defaults to the landscape's own.
    #[serde(default)]
    pub start: Option<ParamVector>,
    #[serde(default)]
    pub task: Option<TaskSpec>,
    pub optimizer: OptimizerConfig,
    /// Step budget for landscape runs.
    #[serde(default = "RunConfig::default_max_iters")]
    pub max_iters: u64,
    #[serde(default = "RunConfig::default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "RunConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "RunConfig::default_epochs")]
    pub epochs: usize,
    /// Keep the per-step trace in the record.
    #[serde(default = "RunConfig::default_keep_trace")]
    pub keep_trace: bool,
}

impl RunConfig {
    fn default_max_iters() -> u64 {
        DEFAULT_MAX_ITERS
    }
    fn default_tol() -> f64 {
        DEFAULT_TOL
    }
    fn default_batch_size() -> usize {
        DEFAULT_BATCH_SIZE
    }
    fn default_epochs() -> usize {
        DEFAULT_EPOCHS
    }
    fn default_keep_trace() -> bool {
        true
    }

    fn base(optimizer: OptimizerConfig) -> Self {
        Self {
            landscape: None,
            offset: None,
            start: None,
            task: None,
            optimizer,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            keep_trace: true,
        }
    }

    pub fn lowdim(landscape: LandscapeId, optimizer: OptimizerConfig) -> Self {
        Self {
            landscape: Some(landscape),
            ..Self::base(optimizer)
        }
    }

    pub fn nn(task: TaskSpec, optimizer: OptimizerConfig) -> Self {
        Self {
            task: Some(task),
            ..Self::base(optimizer)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.landscape, &self.task) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid("task", "give either a landscape or a task, not both"))
            }
            (None, None) => return Err(Error::invalid("landscape", "a landscape or a task is required")),
            _ => {}
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol", format!("must be > 0, got {}", self.tol)));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if let Some(c) = self.offset {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("offset", format!("must be > 0, got {c}")));
            }
        }
        if let (Some(start), Some(id)) = (&self.start, self.landscape) {
            let dim = Landscape::new(id).dim();
            if start.len() != dim {
                return Err(Error::invalid(
                    "start",
                    format!("expected {dim} coordinates, got {}", start.len()),
                ));
            }
        }
        if let Some(task) = &self.task {
            task.mlp()?;
            if task.samples < 2 {
                return Err(Error::invalid("samples", "need at least two samples"));
            }
            if task.kind == TaskKind::Blobs && task.classes < 2 {
                return Err(Error::invalid("classes", "need at least two classes"));
            }
        }
        self.optimizer.hyper.validate()
    }

    /// Offset actually applied to a landscape run.
    pub fn effective_offset(&self) -> Option<f64> {
        self.offset.or_else(|| {
            self.optimizer
                .kind
                .uses_log_loss()
                .then_some(DEFAULT_LOG_OFFSET)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Reached the tolerance (landscape runs).
    Converged,
    /// Used its whole budget.
    Completed,
    Diverged,
    /// Stopped by an error other than divergence.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    #[serde(with = "lossy_f64")]
    pub loss: f64,
    #[serde(with = "lossy_f64")]
    pub r_t: f64,
    #[serde(with = "lossy_f64")]
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(with = "lossy_f64")]
    pub train_loss: f64,
    #[serde(with = "lossy_f64")]
    pub val_loss: f64,
    /// Running minimum of `val_loss`.
    #[serde(with = "lossy_f64")]
    pub best_val_loss: f64,
    #[serde(default)]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub status: RunStatus,
    pub converged: bool,
    #[serde(default)]
    pub error: Option<String>,
    /// Optimizer steps taken.
    pub iterations: u64,
    pub iters_to_converge: Option<u64>,
    /// Offset applied to the landscape, if any.
    pub offset: Option<f64>,
    #[serde(with = "lossy_f64")]
    pub final_loss: f64,
    /// `final_loss - min_value` for landscapes.
    pub final_gap: Option<f64>,
    pub final_distance_to_minimum: Option<f64>,
    pub final_params: Vec<f64>,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochRecord>,
    /// One entry per step: loss before the step, the rate factor used, and
    /// the gradient norm.
    pub trace: Vec<TracePoint>,
    pub wall_time_seconds: f64,
}

impl RunRecord {
    fn empty(config: RunConfig) -> Self {
        Self {
            config,
            status: RunStatus::Completed,
            converged: false,
            error: None,
            iterations: 0,
            iters_to_converge: None,
            offset: None,
            final_loss: f64::NAN,
            final_gap: None,
            final_distance_to_minimum: None,
            final_params: Vec::new(),
            best_val_loss: None,
            best_epoch: None,
            epochs: Vec::new(),
            trace: Vec::new(),
            wall_time_seconds: 0.0,
        }
    }

    fn failed(config: RunConfig, err: &Error) -> Self {
        Self {
            status: RunStatus::Failed,
            error: Some(err.to_string()),
            ..Self::empty(config)
        }
    }

    pub fn is_lowdim(&self) -> bool {
        self.config.landscape.is_some()
    }

    pub fn optimizer(&self) -> OptimizerKind {
        self.config.optimizer.kind
    }

    /// Quality of the run, lower is better: best validation loss for network
    /// runs, final gap to the minimum for landscape runs.
    pub fn metric(&self) -> f64 {
        let v = if self.is_lowdim() {
            self.final_gap
        } else {
            self.best_val_loss
        };
        v.filter(|x| x.is_finite()).unwrap_or(f64::INFINITY)
    }

    /// When the run got there: best epoch for network runs, steps to
    /// convergence (or steps taken) for landscape runs.
    pub fn when(&self) -> f64 {
        if self.is_lowdim() {
            self.iters_to_converge.unwrap_or(self.iterations) as f64
        } else {
            self.best_epoch.map_or(f64::NAN, |e| e as f64)
        }
    }

    /// Same record with wall time zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Orders records best first. Converged landscape runs rank by steps to
/// converge; the rest by how close they got. Network runs rank by best
/// validation loss.
pub fn rank_cmp(a: &RunRecord, b: &RunRecord) -> std::cmp::Ordering {
    if a.is_lowdim() && b.is_lowdim() {
        match (a.converged, b.converged) {
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (true, true) => a.iters_to_converge.cmp(&b.iters_to_converge),
            (false, false) => {
                let da = a.final_distance_to_minimum.filter(|d| d.is_finite()).unwrap_or(f64::INFINITY);
                let db = b.final_distance_to_minimum.filter(|d| d.is_finite()).unwrap_or(f64::INFINITY);
                da.total_cmp(&db)
            }
        }
    } else {
        a.metric().total_cmp(&b.metric())
    }
}

/// Best run of each optimizer, keyed by kind.
pub fn best_per_optimizer(records: &[RunRecord]) -> BTreeMap<OptimizerKind, &RunRecord> {
    let mut best: BTreeMap<OptimizerKind, &RunRecord> = BTreeMap::new();
    for r in records {
        best.entry(r.optimizer())
            .and_modify(|cur| {
                if rank_cmp(r, cur).is_lt() {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    best
}

fn is_divergent(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_LOSS
}

/// Runs an optimizer on a test landscape until the loss is within `tol` of the
/// known minimum or the step budget is used up.
pub fn run_lowdim(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let id = cfg
        .landscape
        .ok_or_else(|| Error::invalid("landscape", "landscape run without a landscape"))?;
    let offset = cfg.effective_offset();
    let landscape = match offset {
        Some(c) => offset_loss(&Landscape::new(id), c)?,
        None => Landscape::new(id),
    };
    let mut opt = Optimizer::new(cfg.optimizer, landscape.dim())?;
    let mut rec = RunRecord::empty(cfg.clone());
    rec.offset = offset;

    let mut theta = cfg.start.clone().unwrap_or_else(|| landscape.default_start());
    let mut clock: Option<Instant> = None;
    let mut k: u64 = 0;
    loop {
        let loss = landscape.eval(&theta)?;
        rec.final_loss = loss;
        if is_divergent(loss) {
            rec.status = RunStatus::Diverged;
            break;
        }
        if loss - landscape.min_value() <= cfg.tol {
            rec.status = RunStatus::Converged;
            rec.converged = true;
            rec.iters_to_converge = Some(k);
            break;
        }
        if k == cfg.max_iters {
            break;
        }
        let g = landscape.grad(&theta)?;
        match opt.step(&theta, &g, loss) {
            Ok((next, trace)) => {
                if cfg.keep_trace {
                    rec.trace.push(TracePoint {
                        loss,
                        r_t: trace.r_t,
                        grad_norm: g.norm(),
                    });
                }
                theta = next;
            }
            Err(Error::NonFinite(_)) => {
                rec.status = RunStatus::Diverged;
                break;
            }
            Err(e) => {
                rec.status = RunStatus::Failed;
                rec.error = Some(e.to_string());
                break;
            }
        }
        k += 1;
        // The first step is warm-up and stays out of the timing.
        if clock.is_none() {
            clock = Some(Instant::now());
        }
    }

    rec.iterations = k;
    rec.final_gap = Some(rec.final_loss - landscape.min_value());
    rec.final_distance_to_minimum = Some(landscape.distance_to_minimum(&theta));
    rec.final_params = theta.into_vec();
    rec.wall_time_seconds = clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
    Ok(rec)
}

fn mean_loss(spec: &MlpSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    Ok(nn::forward(spec, params, batch)?.0)
}

/// Trains the task's MLP for `epochs` epochs of shuffled minibatches,
/// tracking the best validation loss.
pub fn run_nn(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let task = cfg
        .task
        .as_ref()
        .ok_or_else(|| Error::invalid("task", "network run without a task"))?;
    let spec = task.mlp()?;
    let (train, val) = task.generate(cfg.seed)?;
    let root = RngStream::new(cfg.seed);
    let mut init_rng = root.substream(2);
    let mut shuffle_rng = root.substream(3);

    let mut params = spec.init_params(&mut init_rng);
    let mut opt = Optimizer::new(cfg.optimizer, params.len())?;
    let mut rec = RunRecord::empty(cfg.clone());
    let classify = task.kind == TaskKind::Blobs;
    let val_accuracy = |p: &ParamVector| -> Result<Option<f64>> {
        Ok(if classify {
            Some(nn::accuracy(&spec, p, &val)?)
        } else {
            None
        })
    };

    let initial_val = mean_loss(&spec, &params, &val)?;
    let mut best = initial_val;
    let mut best_epoch = 0;
    rec.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&spec, &params, &train)?,
        val_loss: initial_val,
        best_val_loss: initial_val,
        val_accuracy: val_accuracy(&params)?,
    });
    rec.final_loss = initial_val;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps: u64 = 0;
    let mut clock: Option<Instant> = None;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select(chunk);
            let (loss, cache) = nn::forward(&spec, &params, &batch)?;
            if is_divergent(loss) {
                rec.status = RunStatus::Diverged;
                rec.final_loss = loss;
                break 'epochs;
            }
            let g = nn::backward(&spec, &params, &batch, &cache)?;
            match opt.step(&params, &g, loss) {
                Ok((next, trace)) => {
                    if cfg.keep_trace {
                        rec.trace.push(TracePoint {
                            loss,
                            r_t: trace.r_t,
                            grad_norm: g.norm(),
                        });
                    }
                    params = next;
                }
                Err(Error::NonFinite(_)) => {
                    rec.status = RunStatus::Diverged;
                    break 'epochs;
                }
                Err(e) => {
                    rec.status = RunStatus::Failed;
                    rec.error = Some(e.to_string());
                    break 'epochs;
                }
            }
            train_sum += loss * chunk.len() as f64;
            steps += 1;
            if clock.is_none() {
                clock = Some(Instant::now());
            }
        }
        let val_loss = mean_loss(&spec, &params, &val)?;
        rec.final_loss = val_loss;
        if is_divergent(val_loss) {
            rec.status = RunStatus::Diverged;
            break;
        }
        if val_loss < best {
            best = val_loss;
            best_epoch = epoch;
        }
        rec.epochs.push(EpochRecord {
            epoch,
            train_loss: train_sum / train.len() as f64,
            val_loss,
            best_val_loss: best,
            val_accuracy: val_accuracy(&params)?,
        });
    }

    rec.iterations = steps;
    rec.best_val_loss = Some(best);
    rec.best_epoch = Some(best_epoch);
    rec.final_params = params.into_vec();
    rec.wall_time_seconds = clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
    Ok(rec)
}

/// Dispatches on the configured target. Errors become failed records.
pub fn run(cfg: &RunConfig) -> RunRecord {
    let result = if cfg.task.is_some() {
        run_nn(cfg)
    } else {
        run_lowdim(cfg)
    };
    result.unwrap_or_else(|e| RunRecord::failed(cfg.clone(), &e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

impl Range {
    fn sample(&self, rng: &mut RngStream) -> f64 {
        let u: f64 = rng.random();
        match self.scale {
            Scale::Linear => self.lo + u * (self.hi - self.lo),
            Scale::Log => (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp(),
        }
    }

    fn validate(&self, field: &'static str) -> Result<()> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo <= self.hi
            && (self.scale == Scale::Linear || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(field, "range needs lo <= hi (and lo > 0 on a log scale)"))
        }
    }
}

/// Values per hyperparameter. Fields left out keep the base configuration's
/// value. A kind only scans the hyperparameters it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de>"))]
pub struct HyperGrid<T> {
    #[serde(default)]
    pub eta: Option<T>,
    #[serde(default)]
    pub mu: Option<T>,
    #[serde(default)]
    pub xi: Option<T>,
    #[serde(default)]
    pub beta: Option<T>,
    #[serde(default)]
    pub lambda: Option<T>,
    #[serde(default)]
    pub beta2: Option<T>,
    #[serde(default)]
    pub epsilon: Option<T>,
}

#[derive(Clone, Copy)]
enum Field {
    Eta,
    Mu,
    Xi,
    Beta,
    Lambda,
    Beta2,
    Epsilon,
}

impl Field {
    fn name(self) -> &'static str {
        match self {
            Field::Eta => "eta",
            Field::Mu => "mu",
            Field::Xi => "xi",
            Field::Beta => "beta",
            Field::Lambda => "lambda",
            Field::Beta2 => "beta2",
            Field::Epsilon => "epsilon",
        }
    }

    fn set(self, h: &mut HyperParams, v: f64) {
        match self {
            Field::Eta => h.eta = v,
            Field::Mu => h.mu = v,
            Field::Xi => h.xi = v,
            Field::Beta => h.beta = v,
            Field::Lambda => h.lambda = v,
            Field::Beta2 => h.beta2 = v,
            Field::Epsilon => h.epsilon = v,
        }
    }

    /// Hyperparameters that influence a kind's updates.
    fn used_by(kind: OptimizerKind) -> &'static [Field] {
        use Field::*;
        match kind {
            OptimizerKind::Sgd => &[Eta, Mu, Lambda],
            OptimizerKind::RmsProp => &[Eta, Lambda, Beta2, Epsilon],
            OptimizerKind::Adam | OptimizerKind::AdamW => &[Eta, Mu, Lambda, Beta2, Epsilon],
            OptimizerKind::ImSgd | OptimizerKind::ImLogSgd => &[Eta, Mu, Xi, Beta, Lambda],
            OptimizerKind::ImRms => &[Eta, Mu, Xi, Beta, Lambda, Beta2, Epsilon],
        }
    }
}

impl<T> Default for HyperGrid<T> {
    fn default() -> Self {
        Self {
            eta: None,
            mu: None,
            xi: None,
            beta: None,
            lambda: None,
            beta2: None,
            epsilon: None,
        }
    }
}

impl<T> HyperGrid<T> {
    fn get(&self, f: Field) -> Option<&T> {
        match f {
            Field::Eta => self.eta.as_ref(),
            Field::Mu => self.mu.as_ref(),
            Field::Xi => self.xi.as_ref(),
            Field::Beta => self.beta.as_ref(),
            Field::Lambda => self.lambda.as_ref(),
            Field::Beta2 => self.beta2.as_ref(),
            Field::Epsilon => self.epsilon.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Search {
    /// Cartesian product of the listed values.
    Grid(HyperGrid<Vec<f64>>),
    /// `runs` draws per optimizer from the given ranges.
    Random {
        runs: usize,
        #[serde(default)]
        seed: u64,
        ranges: HyperGrid<Range>,
    },
}

/// One search applied identically to every listed optimizer, so shared
/// hyperparameters always span the same values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Problem, budget, seed, and default hyperparameters. The optimizer kind
    /// in here is ignored.
    pub base: RunConfig,
    pub optimizers: Vec<OptimizerKind>,
    pub search: Search,
    /// Keep per-step traces in the records.
    #[serde(default = "RunConfig::default_keep_trace")]
    pub keep_traces: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.optimizers.is_empty() {
            return Err(Error::invalid("optimizers", "at least one optimizer is required"));
        }
        let fields = [
            Field::Eta,
            Field::Mu,
            Field::Xi,
            Field::Beta,
            Field::Lambda,
            Field::Beta2,
            Field::Epsilon,
        ];
        match &self.search {
            Search::Grid(grid) => {
                for f in fields {
                    if let Some(values) = grid.get(f) {
                        if values.is_empty() {
                            return Err(Error::invalid(f.name(), "grid axis is empty"));
                        }
                        for &v in values {
                            let mut h = self.base.optimizer.hyper;
                            f.set(&mut h, v);
                            h.validate()?;
                        }
                    }
                }
            }
            Search::Random { runs, ranges, .. } => {
                if *runs == 0 {
                    return Err(Error::invalid("runs", "must be >= 1"));
                }
                for f in fields {
                    if let Some(r) = ranges.get(f) {
                        r.validate(f.name())?;
                        for v in [r.lo, r.hi] {
                            let mut h = self.base.optimizer.hyper;
                            f.set(&mut h, v);
                            h.validate()?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Every run configuration, in execution and output order: optimizers in
    /// the listed order, then grid axes in the order η, μ, ξ, β, λ, β₂, ε
    /// with the last axis varying fastest.
    pub fn configs(&self) -> Result<Vec<RunConfig>> {
        self.validate()?;
        let mut out = Vec::new();
        for (k_idx, &kind) in self.optimizers.iter().enumerate() {
            let used = Field::used_by(kind);
            let mut base = self.base.clone();
            base.optimizer.kind = kind;
            base.keep_trace = self.keep_traces;
            match &self.search {
                Search::Grid(grid) => {
                    let mut hypers = vec![base.optimizer.hyper];
                    for &f in used {
                        if let Some(values) = grid.get(f) {
                            hypers = hypers
                                .into_iter()
                                .flat_map(|h| {
                                    values.iter().map(move |&v| {
                                        let mut h = h;
                                        f.set(&mut h, v);
                                        h
                                    })
                                })
                                .collect();
                        }
                    }
                    out.extend(hypers.into_iter().map(|hyper| RunConfig {
                        optimizer: OptimizerConfig { kind, hyper },
                        ..base.clone()
                    }));
                }
                Search::Random { runs, seed, ranges } => {
                    let mut rng = RngStream::new(*seed).substream(k_idx as u64);
                    for _ in 0..*runs {
                        let mut hyper = base.optimizer.hyper;
                        // Draw every axis so one kind's draws line up with
                        // another's regardless of which fields it uses.
                        for f in [
                            Field::Eta,
                            Field::Mu,
                            Field::Xi,
                            Field::Beta,
                            Field::Lambda,
                            Field::Beta2,
                            Field::Epsilon,
                        ] {
                            if let Some(r) = ranges.get(f) {
                                let v = r.sample(&mut rng);
                                if used.iter().any(|u| u.name() == f.name()) {
                                    f.set(&mut hyper, v);
                                }
                            }
                        }
                        out.push(RunConfig {
                            optimizer: OptimizerConfig { kind, hyper },
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `count` points spaced evenly in log10 between `10^lo` and `10^hi`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo)],
        _ => (0..count)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// Default landscape grid: η over 1e-4..1e0 and ξ over 1e-3..1e3, one point
/// per decade, and μ in {0, 0.9, 0.99}.
pub fn default_lowdim_grid() -> HyperGrid<Vec<f64>> {
    HyperGrid {
        eta: Some(logspace(-4.0, 0.0, 5)),
        mu: Some(vec![0.0, 0.9, 0.99]),
        xi: Some(logspace(-3.0, 3.0, 7)),
        ..HyperGrid::default()
    }
}

/// Optimizers compared on the landscapes.
pub const LOWDIM_OPTIMIZERS: [OptimizerKind; 5] = [
    OptimizerKind::Sgd,
    OptimizerKind::Adam,
    OptimizerKind::ImSgd,
    OptimizerKind::ImLogSgd,
    OptimizerKind::ImRms,
];

/// Default-grid sweep of `optimizers` on one landscape.
pub fn lowdim_sweep(landscape: LandscapeId, optimizers: &[OptimizerKind]) -> SweepSpec {
    SweepSpec {
        base: RunConfig::lowdim(
            landscape,
            OptimizerConfig {
                kind: OptimizerKind::Sgd,
                hyper: HyperParams::default(),
            },
        ),
        optimizers: optimizers.to_vec(),
        search: Search::Grid(default_lowdim_grid()),
        keep_traces: false,
    }
}

/// Default network grid: η over 1e-3..1e0 and ξ over 1e-4..1e0, one point
/// per decade and every other decade respectively; μ stays at its default.
pub fn default_nn_grid() -> HyperGrid<Vec<f64>> {
    HyperGrid {
        eta: Some(logspace(-3.0, 0.0, 4)),
        xi: Some(logspace(-4.0, 0.0, 3)),
        ..HyperGrid::default()
    }
}

/// Optimizers compared on the network tasks.
pub const NN_OPTIMIZERS: [OptimizerKind; 6] = [
    OptimizerKind::Sgd,
    OptimizerKind::Adam,
    OptimizerKind::AdamW,
    OptimizerKind::ImSgd,
    OptimizerKind::ImLogSgd,
    OptimizerKind::ImRms,
];

/// Default-grid sweep of `optimizers` on the seeded polynomial regression task.
pub fn regression_sweep(seed: u64, optimizers: &[OptimizerKind]) -> SweepSpec {
    let mut base = RunConfig::nn(
        TaskSpec::new(TaskKind::PolyRegression),
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            hyper: HyperParams::default(),
        },
    );
    base.seed = seed;
    SweepSpec {
        base,
        optimizers: optimizers.to_vec(),
        search: Search::Grid(default_nn_grid()),
        keep_traces: false,
    }
}

/// Worker count after applying the [`THREADS_ENV`] cap.
pub fn effective_parallelism(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&c| c > 0);
    let n = requested.max(1);
    cap.map_or(n, |c| n.min(c))
}

/// Runs every configuration of `spec` on a pool of `parallelism` workers.
/// Results come back in [`SweepSpec::configs`] order whatever the pool size;
/// a failing run becomes a failed record and never aborts the sweep.
pub fn sweep(spec: &SweepSpec, parallelism: usize) -> Result<Vec<RunRecord>> {
    let configs = spec.configs()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_parallelism(parallelism))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| configs.par_iter().map(run).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub optimizer: OptimizerKind,
    /// Records that entered the statistics.
    pub runs: usize,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub when_mean: f64,
    pub when_std: f64,
    pub best_metric: f64,
    pub best_when: f64,
    pub best_wall_time_seconds: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per optimizer: mean and population standard deviation of the metric and
/// of its epoch/step over the `top_k` best runs, plus the single best run.
/// Runs without a finite metric are left out.
pub fn summarize(records: &[RunRecord], top_k: usize) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::invalid("records", "nothing to summarize"));
    }
    let mut groups: BTreeMap<OptimizerKind, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.optimizer()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (kind, mut group) in groups {
        group.retain(|r| r.metric().is_finite());
        group.sort_by(|a, b| rank_cmp(a, b));
        group.truncate(top_k.max(1));
        if group.is_empty() {
            rows.push(SummaryRow {
                optimizer: kind,
                runs: 0,
                metric_mean: f64::NAN,
                metric_std: f64::NAN,
                when_mean: f64::NAN,
                when_std: f64::NAN,
                best_metric: f64::NAN,
                best_when: f64::NAN,
                best_wall_time_seconds: f64::NAN,
            });
            continue;
        }
        let metrics: Vec<f64> = group.iter().map(|r| r.metric()).collect();
        let whens: Vec<f64> = group.iter().map(|r| r.when()).collect();
        let (metric_mean, metric_std) = mean_std(&metrics);
        let (when_mean, when_std) = mean_std(&whens);
        let best = group[0];
        rows.push(SummaryRow {
            optimizer: kind,
            runs: group.len(),
            metric_mean,
            metric_std,
            when_mean,
            when_std,
            best_metric: best.metric(),
            best_when: best.when(),
            best_wall_time_seconds: best.wall_time_seconds,
        });
    }
    Ok(rows)
}

/// One JSON object per line.
pub fn write_records_ndjson<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_ndjson<R: BufRead>(input: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Per-step traces as `run_id,step,loss,r_t,grad_norm`; `run_id` is the
/// record's position in `records` and `step` counts from 1.
pub fn write_trace_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "step", "loss", "r_t", "grad_norm"])?;
    for (run_id, r) in records.iter().enumerate() {
        for (i, p) in r.trace.iter().enumerate() {
            w.write_record(&[
                run_id.to_string(),
                (i + 1).to_string(),
                p.loss.to_string(),
                p.r_t.to_string(),
                p.grad_norm.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary table: optimizer, runs, metric mean/std, epoch-or-step mean/std,
/// and the best run's metric, epoch-or-step and wall time.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "optimizer",
        "runs",
        "metric_mean",
        "metric_std",
        "epoch_mean",
        "epoch_std",
        "best_metric",
        "best_epoch",
        "best_wall_time_s",
    ])?;
    for r in rows {
        w.write_record(&[
            r.optimizer.to_string(),
            r.runs.to_string(),
            r.metric_mean.to_string(),
            r.metric_std.to_string(),
            r.when_mean.to_string(),
            r.when_std.to_string(),
            r.best_metric.to_string(),
            r.best_when.to_string(),
            format!("{:.3}", r.best_wall_time_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}
