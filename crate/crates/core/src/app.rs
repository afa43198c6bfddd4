//! Command implementations behind the `dacapo-sim` binary: configuration
//! loading, the codec utility, offline allocation, simulation runs with
//! their trace files, and the cycle-model cross-check.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::FormatError;
use crate::experiment::{default_partition, prepare, run_prepared, summarize, ModelsConfig, RecoveryConfig, RunSummary};
use crate::fabric::{event_sim_gemm, CycleModel, GemmShape, PartitionConfig, EVENT_SIM_LIMIT};
use crate::mx::{quantize_tensor, BlockingMajor, MxPrecision, MxTensor, BLOCK_SIZE};
use crate::perf::{frame_budget, job_cycles, KernelJob, KernelKind, PerfError};
use crate::scheduler::{
    Policy, PolicyParams, ScheduleTrace, SchedulerConfig, SchedulerError, WindowAccuracy, DEFAULT_SPATIAL_WINDOW_S,
    DEFAULT_WINDOW_S,
};
use crate::stream::Scenario;
use crate::tensor::Matrix;

pub const THREADS_ENV: &str = "DACAPO_SIM_THREADS";

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("infeasible allocation: {0}")]
    Infeasible(PerfError),
    #[error("cycle model mismatch: {0}")]
    Mismatch(String),
    #[error("simulation failed: {0}")]
    Simulation(SchedulerError),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Simulation(_) => 1,
            AppError::Io { .. } | AppError::Parse { .. } => 2,
            AppError::Infeasible(_) => 3,
            AppError::Mismatch(_) => 4,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, message: impl ToString) -> Self {
        AppError::Parse { path: path.to_path_buf(), message: message.to_string() }
    }

    fn format(path: &Path, e: FormatError) -> Self {
        match e {
            FormatError::Io(source) => Self::io(path, source),
            other => Self::parse(path, other),
        }
    }
}

impl From<SchedulerError> for AppError {
    fn from(e: SchedulerError) -> Self {
        match e {
            SchedulerError::Perf(p @ PerfError::Infeasible { .. }) => AppError::Infeasible(p),
            other => AppError::Simulation(other),
        }
    }
}

/// Where the drift scenario comes from: a shipped preset or a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for ScenarioSource {
    fn default() -> Self {
        Self { preset: Some("s1".into()), file: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Retraining window of the spatial-only policy.
    pub spatial_s: f64,
    /// Retraining window of the fixed-window baseline.
    pub fixed_s: f64,
    /// Window of the per-window accuracy report.
    pub report_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { spatial_s: DEFAULT_SPATIAL_WINDOW_S, fixed_s: DEFAULT_WINDOW_S, report_s: DEFAULT_WINDOW_S }
    }
}

impl WindowConfig {
    pub fn params(&self, policy: Policy) -> PolicyParams {
        let mut p = PolicyParams::new(policy);
        p.report_window_s = self.report_s;
        match policy {
            Policy::Spatiotemporal => p,
            Policy::Spatial => p.with_window(self.spatial_s),
            Policy::FixedWindow => p.with_window(self.fixed_s),
        }
    }
}

/// Grid for the analytic-vs-event cycle cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Every `m` and `n` in `1..=max_mn` is checked.
    pub max_mn: u32,
    pub k_values: Vec<u32>,
    /// Sub-array shapes as `[rows, cols]`.
    pub sa_dims: Vec<[u32; 2]>,
    pub precisions: Vec<MxPrecision>,
    /// Added per tile to the analytic fill term; nonzero only to show the
    /// check catches a wrong model.
    pub fill_offset: i64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            max_mn: 20,
            k_values: vec![1, 15, 16, 17, 48, 64],
            sa_dims: vec![[1, 1], [2, 2], [4, 4], [8, 16], [16, 16]],
            precisions: MxPrecision::ALL.to_vec(),
            fill_offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub policies: Vec<Policy>,
    pub out_dir: PathBuf,
    pub scenario: ScenarioSource,
    pub models: ModelsConfig,
    pub scheduler: SchedulerConfig,
    pub windows: WindowConfig,
    pub recovery: RecoveryConfig,
    pub validate: ValidateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            policies: Policy::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
            scenario: ScenarioSource::default(),
            models: ModelsConfig::default(),
            scheduler: SchedulerConfig::default(),
            windows: WindowConfig::default(),
            recovery: RecoveryConfig::default(),
            validate: ValidateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, AppError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative scenario file is taken
    /// relative to the config's directory.
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(file) = &cfg.scenario.file {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.scenario.file = Some(base.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), AppError> {
        self.scheduler.validate().map_err(|e| AppError::Config(e.to_string()))?;
        if self.policies.is_empty() {
            return Err(AppError::Config("at least one policy is required".into()));
        }
        for (name, w) in [
            ("windows.spatial_s", self.windows.spatial_s),
            ("windows.fixed_s", self.windows.fixed_s),
            ("windows.report_s", self.windows.report_s),
            ("recovery.bucket_s", self.recovery.bucket_s),
            ("recovery.step_s", self.recovery.step_s),
        ] {
            if !(w.is_finite() && w > 0.0) {
                return Err(AppError::Config(format!("{name} must be positive, got {w}")));
            }
        }
        match (&self.scenario.preset, &self.scenario.file) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(AppError::Config("scenario needs exactly one of `preset` or `file`".into()))
            }
            (Some(name), None) => {
                Scenario::preset(name).map_err(|e| AppError::Config(e.to_string()))?;
            }
            (None, Some(_)) => {}
        }
        Ok(())
    }

    pub fn load_scenario(&self) -> Result<Scenario, AppError> {
        let scenario = match (&self.scenario.preset, &self.scenario.file) {
            (Some(name), None) => Scenario::preset(name).map_err(|e| AppError::Config(e.to_string()))?,
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
                let s: Scenario = toml::from_str(&text).map_err(|e| AppError::parse(path, e))?;
                s.validate().map_err(|e| AppError::Config(e.to_string()))?;
                s
            }
            _ => return Err(AppError::Config("scenario needs exactly one of `preset` or `file`".into())),
        };
        if scenario.fps != self.scheduler.fps {
            return Err(AppError::Config(format!(
                "scenario runs at {} fps but scheduler.fps is {}",
                scenario.fps, self.scheduler.fps
            )));
        }
        Ok(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodeReport {
    pub precision: MxPrecision,
    pub rows: usize,
    pub cols: usize,
    pub blocks: usize,
    /// Largest absolute error over all elements.
    pub max_error: f64,
    /// Mean over blocks of each block's largest absolute error.
    pub mean_block_max_error: f64,
    /// Largest ratio of an element's error to its truncation bound.
    pub max_error_over_bound: f64,
    pub bound_violations: usize,
}

/// Quantizes an F32M matrix file to an MXT1 file, row-major blocking.
pub fn cmd_encode(input: &Path, output: &Path, precision: MxPrecision) -> Result<EncodeReport, AppError> {
    let file = File::open(input).map_err(|e| AppError::io(input, e))?;
    let m = Matrix::read_from(BufReader::new(file)).map_err(|e| AppError::format(input, e))?;
    let t = quantize_tensor(&m, precision, BlockingMajor::RowMajor).map_err(|e| AppError::parse(input, e))?;
    let report = encode_report(&m, &t);
    let out = File::create(output).map_err(|e| AppError::io(output, e))?;
    let mut w = BufWriter::new(out);
    t.write_to(&mut w).map_err(|e| AppError::format(output, e))?;
    w.flush().map_err(|e| AppError::io(output, e))?;
    Ok(report)
}

fn encode_report(m: &Matrix, t: &MxTensor) -> EncodeReport {
    let decoded = t.decode();
    let mut report = EncodeReport {
        precision: t.precision(),
        rows: m.rows(),
        cols: m.cols(),
        blocks: t.blocks().len(),
        max_error: 0.0,
        mean_block_max_error: 0.0,
        max_error_over_bound: 0.0,
        bound_violations: 0,
    };
    let mut sum = 0.0;
    for r in 0..t.lanes() {
        for (b, block) in t.lane(r).iter().enumerate() {
            let mut block_max = 0.0f64;
            for j in 0..BLOCK_SIZE {
                let c = b * BLOCK_SIZE + j;
                if c >= m.cols() {
                    break;
                }
                let err = (f64::from(decoded.get(r, c)) - f64::from(m.get(r, c))).abs();
                let bound = 2f64.powi(block.unit_exponent(j));
                block_max = block_max.max(err);
                report.max_error_over_bound = report.max_error_over_bound.max(err / bound);
                if err > bound {
                    report.bound_violations += 1;
                }
            }
            report.max_error = report.max_error.max(block_max);
            sum += block_max;
        }
    }
    if report.blocks > 0 {
        report.mean_block_max_error = sum / report.blocks as f64;
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub student: String,
    pub fps: u32,
    pub clock_hz: u64,
    pub partition: PartitionConfig,
    pub inference_cycles: u64,
    pub frame_budget_cycles: u64,
}

pub fn cmd_allocate(cfg: &RunConfig) -> Result<AllocationReport, AppError> {
    let partition = default_partition(&cfg.models, &cfg.scheduler)?;
    let job = KernelJob::new(KernelKind::Inference, cfg.models.student.clone(), 1);
    let inference_cycles = job_cycles(&job, partition.r_bsa).map_err(SchedulerError::from)?;
    Ok(AllocationReport {
        student: cfg.models.student.name().to_string(),
        fps: cfg.scheduler.fps,
        clock_hz: cfg.scheduler.clock_hz,
        partition,
        inference_cycles,
        frame_budget_cycles: frame_budget(cfg.scheduler.fps, cfg.scheduler.clock_hz),
    })
}

/// Run settings given on the command line on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub policy: Option<Policy>,
    pub out_dir: Option<PathBuf>,
    /// Run this many consecutive seeds starting at the configured one.
    pub sweep_seeds: Option<u64>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &RunConfig) -> RunConfig {
        let mut cfg = cfg.clone();
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(policy) = self.policy {
            cfg.policies = vec![policy];
        }
        if let Some(out) = &self.out_dir {
            cfg.out_dir = out.clone();
        }
        cfg
    }
}

/// Full trace file: the trace plus the config that produced it. The echoed
/// config leaves `out_dir` empty so identical runs written to different
/// places stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub config: RunConfig,
    pub seed: u64,
    pub trace: ScheduleTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub kind: String,
    pub start_s: f64,
    pub end_s: f64,
    pub cycles: u64,
    pub acc: Option<f64>,
    pub drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub mean_recovery_s: f64,
    pub drift_count: usize,
    pub drop_rate: f64,
    pub retrain_phases: usize,
}

impl From<&RunSummary> for AggregateRow {
    fn from(s: &RunSummary) -> Self {
        Self {
            scenario: s.scenario.clone(),
            policy: s.policy,
            seed: s.seed,
            mean_accuracy: s.mean_accuracy,
            mean_recovery_s: s.mean_recovery_s,
            drift_count: s.drift_count,
            drop_rate: s.drop_rate,
            retrain_phases: s.retrain_phases,
        }
    }
}

pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_JSON: &str = "trace.json";
pub const WINDOWS_CSV: &str = "windows.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const AGGREGATE_CSV: &str = "aggregate.csv";

/// Output directory of one (seed, policy) run.
pub fn run_dir(out_dir: &Path, seed: u64, policy: Policy) -> PathBuf {
    out_dir.join(format!("seed-{seed}")).join(policy.name())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summaries: Vec<RunSummary>,
    pub aggregate_csv: PathBuf,
}

/// Worker count for seed sweeps, from the environment when set.
pub fn worker_threads() -> Result<Option<usize>, AppError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(AppError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn cmd_run(cfg: &RunConfig, overrides: &RunOverrides) -> Result<RunOutput, AppError> {
    let cfg = overrides.apply(cfg);
    cfg.validate()?;
    let scenario = cfg.load_scenario()?;
    let partition = default_partition(&cfg.models, &cfg.scheduler)?;
    let count = overrides.sweep_seeds.unwrap_or(1);
    if count == 0 {
        return Err(AppError::Config("--sweep-seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..count).map(|i| cfg.seed + i).collect();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| AppError::io(&cfg.out_dir, e))?;

    let run_seed = |seed: u64| -> Result<Vec<RunSummary>, AppError> {
        let prepared = prepare(&scenario, &cfg.models, seed)?;
        cfg.policies
            .iter()
            .map(|&policy| {
                let trace = run_prepared(&prepared, &cfg.models, &cfg.scheduler, partition, cfg.windows.params(policy))?;
                let summary = summarize(&trace, &scenario, seed, &cfg.recovery);
                write_run(&run_dir(&cfg.out_dir, seed, policy), &cfg, seed, &trace, &summary)?;
                Ok(summary)
            })
            .collect()
    };
    let threads = worker_threads()?;
    let nested: Vec<Vec<RunSummary>> = if seeds.len() == 1 {
        vec![run_seed(seeds[0])?]
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| AppError::Config(e.to_string()))?;
        pool.install(|| seeds.par_iter().map(|&s| run_seed(s)).collect::<Result<_, _>>())?
    };
    let summaries: Vec<RunSummary> = nested.into_iter().flatten().collect();
    let aggregate_csv = cfg.out_dir.join(AGGREGATE_CSV);
    let rows: Vec<AggregateRow> = summaries.iter().map(AggregateRow::from).collect();
    write_csv(&aggregate_csv, &rows)?;
    Ok(RunOutput { summaries, aggregate_csv })
}

fn write_run(dir: &Path, cfg: &RunConfig, seed: u64, trace: &ScheduleTrace, summary: &RunSummary) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let rows: Vec<PhaseRow> = trace
        .phases
        .iter()
        .map(|p| PhaseRow {
            kind: p.kind.name().to_string(),
            start_s: p.start_s,
            end_s: p.end_s,
            cycles: p.cycles,
            acc: p.accuracy,
            drift: p.drift_detected,
        })
        .collect();
    write_csv(&dir.join(TRACE_CSV), &rows)?;
    write_csv(&dir.join(WINDOWS_CSV), &trace.per_window_accuracy)?;
    let mut config = cfg.clone();
    config.out_dir = PathBuf::new();
    let file = TraceFile { config, seed, trace: trace.clone() };
    write_json(&dir.join(TRACE_JSON), &file)?;
    write_json(&dir.join(SUMMARY_JSON), summary)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::parse(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| AppError::parse(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::parse(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, AppError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::parse(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| AppError::parse(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, AppError> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::parse(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<PhaseRow>, AppError> {
    read_csv(path)
}

pub fn read_windows_csv(path: &Path) -> Result<Vec<WindowAccuracy>, AppError> {
    read_csv(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateReport {
    pub checked: usize,
}

/// Compares the closed-form cycle model against the event simulator on
/// every grid point and fails on the first disagreement.
pub fn cmd_validate(cfg: &ValidateConfig) -> Result<ValidateReport, AppError> {
    if cfg.max_mn == 0 || cfg.k_values.is_empty() || cfg.sa_dims.is_empty() || cfg.precisions.is_empty() {
        return Err(AppError::Config("validation grid is empty".into()));
    }
    if cfg.max_mn > EVENT_SIM_LIMIT || cfg.k_values.iter().any(|&k| k == 0 || k > EVENT_SIM_LIMIT) {
        return Err(AppError::Config(format!("grid dimensions must lie in 1..={EVENT_SIM_LIMIT}")));
    }
    if cfg.sa_dims.iter().any(|d| d[0] == 0 || d[1] == 0) {
        return Err(AppError::Config("sub-array dimensions must be positive".into()));
    }
    let model = CycleModel { fill_offset: cfg.fill_offset };
    let mut checked = 0;
    for &p in &cfg.precisions {
        for &[rows, cols] in &cfg.sa_dims {
            for m in 1..=cfg.max_mn {
                for &k in &cfg.k_values {
                    for n in 1..=cfg.max_mn {
                        let shape = GemmShape::new(m, k, n).expect("nonzero dims");
                        let analytic = model.gemm_cycles(shape, rows, cols, p);
                        let event = event_sim_gemm(shape, rows, cols, p).expect("within oracle limits");
                        if analytic != event {
                            return Err(AppError::Mismatch(format!(
                                "m={m} k={k} n={n} on {rows}x{cols} {p}: analytic {} vs event {} cycles",
                                analytic.total_cycles, event.total_cycles
                            )));
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(ValidateReport { checked })
}
