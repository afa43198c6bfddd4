//! Runtime that shares the array between the three continuous-learning
//! kernels.
//!
//! The B-SA runs student inference on every frame as it arrives. The T-SA
//! alternates retraining (with validation) and teacher labeling. Time is
//! kept in integer cycles; frame `i` arrives at `ceil(i * clock / fps)`.
//! A frame is served only if the B-SA is idle when it arrives, otherwise it
//! is dropped and scored as incorrect.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{FabricError, PartitionConfig};
use crate::learner::{LearnerError, Sample};
use crate::perf::{job_cycles, KernelJob, KernelKind, ModelSpec, PerfError};
use crate::seed::SeedTree;
use crate::stream::{SampleBuffer, StreamError, Stream};

pub const DEFAULT_CLOCK_HZ: u64 = 500_000_000;
pub const DEFAULT_WINDOW_S: f64 = 60.0;
pub const DEFAULT_SPATIAL_WINDOW_S: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("n_v must be floor(n_t / 3) = {expected}, got {n_v}")]
    ValidationSplit { n_v: usize, expected: usize },
    #[error("n_ldd must be 4 * n_l = {expected}, got {n_ldd}")]
    DriftLabelRatio { n_ldd: usize, expected: usize },
    #[error("drift threshold must be negative, got {0}")]
    Threshold(f64),
    #[error("`{0}` must be positive")]
    NotPositive(&'static str),
    #[error("window length must be positive, got {0}")]
    Window(f64),
    #[error("stream runs at {stream} fps but the scheduler is configured for {config}")]
    FpsMismatch { stream: u32, config: u32 },
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub n_t: usize,
    pub n_v: usize,
    pub n_l: usize,
    pub n_ldd: usize,
    pub v_thr: f64,
    pub c_b: usize,
    pub epochs_per_retrain: usize,
    pub clock_hz: u64,
    pub fps: u32,
    pub learning_rate: f32,
    pub batch_size: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            n_t: 90,
            n_v: 30,
            n_l: 128,
            n_ldd: 512,
            v_thr: -0.10,
            c_b: crate::stream::DEFAULT_BUFFER_CAPACITY,
            epochs_per_retrain: 4,
            clock_hz: DEFAULT_CLOCK_HZ,
            fps: crate::stream::DEFAULT_FPS,
            learning_rate: crate::learner::DEFAULT_LEARNING_RATE,
            batch_size: crate::learner::DEFAULT_BATCH,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        for (name, v) in [
            ("n_t", self.n_t),
            ("n_l", self.n_l),
            ("c_b", self.c_b),
            ("epochs_per_retrain", self.epochs_per_retrain),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(SchedulerError::NotPositive(name));
            }
        }
        if self.clock_hz == 0 {
            return Err(SchedulerError::NotPositive("clock_hz"));
        }
        if self.fps == 0 {
            return Err(SchedulerError::NotPositive("fps"));
        }
        if self.n_v != self.n_t / 3 {
            return Err(SchedulerError::ValidationSplit { n_v: self.n_v, expected: self.n_t / 3 });
        }
        if self.n_ldd != 4 * self.n_l {
            return Err(SchedulerError::DriftLabelRatio { n_ldd: self.n_ldd, expected: 4 * self.n_l });
        }
        if self.v_thr.is_nan() || self.v_thr >= 0.0 {
            return Err(SchedulerError::Threshold(self.v_thr));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SchedulerError::NotPositive("learning_rate"));
        }
        Ok(())
    }
}

/// Drift is declared when accuracy on newly labeled data falls below the
/// validation accuracy by more than `|v_thr|`.
pub fn detect_drift(acc_l: f64, acc_v: f64, v_thr: f64) -> bool {
    acc_l - acc_v < v_thr
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Spatiotemporal,
    Spatial,
    FixedWindow,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Spatiotemporal, Policy::Spatial, Policy::FixedWindow];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Spatiotemporal => "spatiotemporal",
            Policy::Spatial => "spatial",
            Policy::FixedWindow => "fixed-window",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?} (expected spatiotemporal, spatial or fixed-window)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Retrain,
    Validate,
    Label,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Retrain => "retrain",
            PhaseKind::Validate => "validate",
            PhaseKind::Label => "label",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub kind: PhaseKind,
    pub start_cycle: u64,
    pub cycles: u64,
    pub start_s: f64,
    pub end_s: f64,
    /// Cycles the T-SA actually computed; labeling also waits on frames.
    pub busy_cycles: u64,
    pub samples: usize,
    /// `acc_v` for validation, `acc_l` for labeling.
    pub accuracy: Option<f64>,
    pub drift_detected: bool,
}

impl PhaseReport {
    pub fn end_cycle(&self) -> u64 {
        self.start_cycle + self.cycles
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameOutcome {
    Correct,
    Incorrect,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAccuracy {
    pub window: usize,
    pub start_s: f64,
    pub frames: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub policy: Policy,
    pub partition: PartitionConfig,
    pub config: SchedulerConfig,
    pub window_s: f64,
    pub phases: Vec<PhaseReport>,
    pub drift_events: Vec<f64>,
    pub per_window_accuracy: Vec<WindowAccuracy>,
    pub frames_total: u64,
    pub frames_dropped: u64,
    pub frames_correct: u64,
    #[serde(skip)]
    pub frame_outcomes: Vec<FrameOutcome>,
}

impl ScheduleTrace {
    pub fn fps(&self) -> u32 {
        self.config.fps
    }

    pub fn mean_window_accuracy(&self) -> f64 {
        if self.per_window_accuracy.is_empty() {
            return 0.0;
        }
        self.per_window_accuracy.iter().map(|w| w.accuracy).sum::<f64>() / self.per_window_accuracy.len() as f64
    }

    pub fn drop_rate(&self) -> f64 {
        if self.frames_total == 0 {
            0.0
        } else {
            self.frames_dropped as f64 / self.frames_total as f64
        }
    }

    /// Accuracy over the frames with timestamps in `[from_s, to_s)`, or
    /// `None` if there are none.
    pub fn accuracy_between(&self, from_s: f64, to_s: f64) -> Option<f64> {
        let fps = f64::from(self.fps());
        let first = ((from_s * fps).ceil().max(0.0) as usize).min(self.frame_outcomes.len());
        let last = ((to_s * fps).ceil().max(0.0) as usize).min(self.frame_outcomes.len());
        if last <= first {
            return None;
        }
        let correct = self.frame_outcomes[first..last].iter().filter(|o| **o == FrameOutcome::Correct).count();
        Some(correct as f64 / (last - first) as f64)
    }
}

/// Per-window accuracy with dropped frames scored incorrect. Windows tile
/// the stream from time zero; the last one may be partial.
pub fn windowed_accuracy(trace: &ScheduleTrace, window_s: f64) -> Result<Vec<WindowAccuracy>, SchedulerError> {
    window_accuracy(&trace.frame_outcomes, trace.fps(), window_s)
}

pub fn window_accuracy(outcomes: &[FrameOutcome], fps: u32, window_s: f64) -> Result<Vec<WindowAccuracy>, SchedulerError> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(SchedulerError::Window(window_s));
    }
    let mut out = Vec::new();
    let fps_f = f64::from(fps);
    let mut window = 0usize;
    loop {
        let start_s = window as f64 * window_s;
        let first = (start_s * fps_f).ceil() as usize;
        if first >= outcomes.len() {
            break;
        }
        let last = ((((window + 1) as f64) * window_s * fps_f).ceil() as usize).min(outcomes.len());
        let slice = &outcomes[first..last];
        let correct = slice.iter().filter(|o| **o == FrameOutcome::Correct).count();
        out.push(WindowAccuracy { window, start_s, frames: slice.len() as u64, accuracy: correct as f64 / slice.len() as f64 });
        window += 1;
    }
    Ok(out)
}

/// Learner side of the runtime. `infer` uses the deployed snapshot; the
/// other calls work on the current weights, which become visible to
/// inference only through `deploy`.
pub trait ContinualLearner {
    fn infer(&mut self, frame: &Sample) -> Result<usize, SchedulerError>;
    fn label(&mut self, frame: &Sample) -> Result<usize, SchedulerError>;
    fn retrain(&mut self, d_t: &[Sample], rng: &mut ChaCha8Rng) -> Result<(), SchedulerError>;
    fn validate(&mut self, d_v: &[Sample]) -> Result<f64, SchedulerError>;
    fn evaluate(&mut self, d_l: &[Sample]) -> Result<f64, SchedulerError>;
    fn deploy(&mut self) -> Result<(), SchedulerError>;
}

/// Cycle costs of every kernel on its sub-array, memoized by batch size.
#[derive(Debug, Clone)]
pub struct CostModel {
    student: ModelSpec,
    teacher: ModelSpec,
    partition: PartitionConfig,
    cache: HashMap<(KernelKind, u32), u64>,
}

impl CostModel {
    pub fn new(student: ModelSpec, teacher: ModelSpec, partition: PartitionConfig) -> Result<Self, SchedulerError> {
        partition.validate()?;
        Ok(Self { student, teacher, partition, cache: HashMap::new() })
    }

    fn cost(&mut self, kind: KernelKind, batch: u32) -> Result<u64, SchedulerError> {
        if let Some(c) = self.cache.get(&(kind, batch)) {
            return Ok(*c);
        }
        let (model, rows) = match kind {
            KernelKind::Inference => (&self.student, self.partition.r_bsa),
            KernelKind::Labeling => (&self.teacher, self.partition.r_tsa),
            KernelKind::Retraining | KernelKind::Validation => (&self.student, self.partition.r_tsa),
        };
        let c = job_cycles(&KernelJob::new(kind, model.clone(), batch), rows)?;
        self.cache.insert((kind, batch), c);
        Ok(c)
    }

    pub fn frame_inference(&mut self) -> Result<u64, SchedulerError> {
        self.cost(KernelKind::Inference, 1)
    }

    pub fn label_sample(&mut self) -> Result<u64, SchedulerError> {
        self.cost(KernelKind::Labeling, 1)
    }

    /// One pass of minibatch SGD over `n` samples.
    pub fn retrain_epoch(&mut self, n: usize, batch: usize) -> Result<u64, SchedulerError> {
        let mut total = 0;
        let full = n / batch;
        if full > 0 {
            total += full as u64 * self.cost(KernelKind::Retraining, batch as u32)?;
        }
        if !n.is_multiple_of(batch) {
            total += self.cost(KernelKind::Retraining, (n % batch) as u32)?;
        }
        Ok(total)
    }

    /// Student forward pass over `n` samples on the T-SA (validation and
    /// evaluation of newly labeled samples).
    pub fn tsa_forward(&mut self, n: usize) -> Result<u64, SchedulerError> {
        if n == 0 {
            return Ok(0);
        }
        self.cost(KernelKind::Validation, n as u32)
    }
}

#[derive(Debug, Clone, Copy)]
struct FrameClock {
    clock_hz: u64,
    fps: u64,
}

impl FrameClock {
    fn arrival(&self, frame: u64) -> u64 {
        (u128::from(frame) * u128::from(self.clock_hz)).div_ceil(u128::from(self.fps)) as u64
    }

    fn first_at_or_after(&self, cycle: u64) -> u64 {
        let mut i = (u128::from(cycle) * u128::from(self.fps) / u128::from(self.clock_hz)) as u64;
        while self.arrival(i) < cycle {
            i += 1;
        }
        i
    }
}

/// Knobs that distinguish the three policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    pub policy: Policy,
    /// Retraining window for the windowed policies.
    pub window_s: f64,
    /// Reporting window for per-window accuracy.
    pub report_window_s: f64,
}

impl PolicyParams {
    pub fn new(policy: Policy) -> Self {
        let window_s = match policy {
            Policy::Spatiotemporal => DEFAULT_WINDOW_S,
            Policy::Spatial => DEFAULT_SPATIAL_WINDOW_S,
            Policy::FixedWindow => DEFAULT_WINDOW_S,
        };
        Self { policy, window_s, report_window_s: DEFAULT_WINDOW_S }
    }

    pub fn with_window(mut self, window_s: f64) -> Self {
        self.window_s = window_s;
        self
    }
}

struct Engine<'a, L: ContinualLearner> {
    stream: &'a Stream,
    learner: &'a mut L,
    cfg: SchedulerConfig,
    costs: CostModel,
    clock: FrameClock,
    end_cycle: u64,
    buffer: SampleBuffer,
    sampling: ChaCha8Rng,
    training: ChaCha8Rng,
    // B-SA lane
    next_frame: u64,
    bsa_free: u64,
    outcomes: Vec<FrameOutcome>,
    // T-SA lane
    now: u64,
    phases: Vec<PhaseReport>,
    drift_events: Vec<f64>,
}

impl<'a, L: ContinualLearner> Engine<'a, L> {
    fn new(
        stream: &'a Stream,
        learner: &'a mut L,
        cfg: &SchedulerConfig,
        costs: CostModel,
        seed: u64,
    ) -> Result<Self, SchedulerError> {
        cfg.validate()?;
        if stream.fps() != cfg.fps {
            return Err(SchedulerError::FpsMismatch { stream: stream.fps(), config: cfg.fps });
        }
        let clock = FrameClock { clock_hz: cfg.clock_hz, fps: u64::from(cfg.fps) };
        let seeds = SeedTree::new(seed);
        Ok(Self {
            stream,
            learner,
            cfg: cfg.clone(),
            costs,
            clock,
            end_cycle: clock.arrival(stream.frame_count()),
            buffer: SampleBuffer::new(cfg.c_b),
            sampling: ChaCha8Rng::seed_from_u64(seeds.seed("sampling")),
            training: ChaCha8Rng::seed_from_u64(seeds.seed("training")),
            next_frame: 0,
            bsa_free: 0,
            outcomes: Vec::with_capacity(stream.frame_count() as usize),
            now: 0,
            phases: Vec::new(),
            drift_events: Vec::new(),
        })
    }

    fn seconds(&self, cycle: u64) -> f64 {
        cycle as f64 / self.cfg.clock_hz as f64
    }

    /// Serve every frame that arrives before `cycle` with the deployed model.
    fn advance_inference(&mut self, cycle: u64) -> Result<(), SchedulerError> {
        let cost = self.costs.frame_inference()?;
        while self.next_frame < self.stream.frame_count() {
            let arrival = self.clock.arrival(self.next_frame);
            if arrival >= cycle {
                break;
            }
            let outcome = if self.bsa_free <= arrival {
                self.bsa_free = arrival + cost;
                let frame = self.stream.frame(self.next_frame)?;
                if self.learner.infer(&frame)? == frame.true_label {
                    FrameOutcome::Correct
                } else {
                    FrameOutcome::Incorrect
                }
            } else {
                FrameOutcome::Dropped
            };
            self.outcomes.push(outcome);
            self.next_frame += 1;
        }
        Ok(())
    }

    fn push_phase(&mut self, kind: PhaseKind, start: u64, end: u64, busy: u64, samples: usize, accuracy: Option<f64>, drift: bool) {
        self.phases.push(PhaseReport {
            kind,
            start_cycle: start,
            cycles: end - start,
            start_s: self.seconds(start),
            end_s: self.seconds(end),
            busy_cycles: busy,
            samples,
            accuracy,
            drift_detected: drift,
        });
    }

    /// Labels up to `count` frames, one at a time, each on the first frame
    /// arriving once the T-SA is free, stopping at `deadline`. Each sample
    /// costs one teacher pass plus one student pass for evaluation. Returns
    /// the busy cycles spent.
    fn label_frames(&mut self, count: usize, deadline: u64, out: &mut Vec<Sample>) -> Result<u64, SchedulerError> {
        let cost = self.costs.label_sample()? + self.costs.tsa_forward(1)?;
        let mut busy = 0;
        for _ in 0..count {
            let frame = self.clock.first_at_or_after(self.now);
            if frame >= self.stream.frame_count() {
                break;
            }
            let start = self.clock.arrival(frame);
            if start + cost > deadline {
                break;
            }
            let sample = self.stream.frame(frame)?;
            let label = self.learner.label(&sample)?;
            out.push(sample.labeled(label));
            self.now = start + cost;
            busy += cost;
        }
        Ok(busy)
    }

    /// Labeling phase: `count` samples, student evaluated on them, and
    /// optionally the drift check with its extended labeling.
    fn label_phase(&mut self, count: usize, deadline: u64, acc_v: Option<f64>, detect: bool) -> Result<bool, SchedulerError> {
        let start = self.now;
        let mut d_l = Vec::with_capacity(count.min(4096));
        let mut busy = self.label_frames(count, deadline, &mut d_l)?;
        if d_l.is_empty() {
            return Ok(false);
        }
        let acc_l = self.learner.evaluate(&d_l)?;
        let drift = detect && acc_v.is_some_and(|acc_v| detect_drift(acc_l, acc_v, self.cfg.v_thr));
        if drift {
            self.drift_events.push(self.seconds(self.now));
            self.buffer.reset();
            let more = self.cfg.n_ldd - self.cfg.n_l;
            busy += self.label_frames(more, deadline, &mut d_l)?;
        }
        self.buffer.update(&d_l);
        let end = self.now;
        self.push_phase(PhaseKind::Label, start, end, busy, d_l.len(), Some(acc_l), drift);
        Ok(true)
    }

    /// Retraining and validation on a draw from the buffer. Returns
    /// `acc_v`, or `Ok(None)` when the phase would overrun the stream.
    fn retrain_phase(&mut self, n_t: usize, n_v: usize) -> Result<Option<Option<f64>>, SchedulerError> {
        if self.buffer.is_empty() {
            return Ok(Some(None));
        }
        let (d_t, d_v) = self.buffer.get_data(n_t, n_v, &mut self.sampling)?;
        let train = self.cfg.epochs_per_retrain as u64 * self.costs.retrain_epoch(d_t.len(), self.cfg.batch_size)?;
        let valid = self.costs.tsa_forward(d_v.len())?;
        if self.now + train + valid > self.end_cycle {
            return Ok(None);
        }
        let start = self.now;
        self.learner.retrain(&d_t, &mut self.training)?;
        self.now += train;
        self.push_phase(PhaseKind::Retrain, start, self.now, train, d_t.len(), None, false);
        let acc_v = if d_v.is_empty() { None } else { Some(self.learner.validate(&d_v)?) };
        let vstart = self.now;
        self.now += valid;
        self.push_phase(PhaseKind::Validate, vstart, self.now, valid, d_v.len(), acc_v, false);
        self.advance_inference(self.now)?;
        self.learner.deploy()?;
        Ok(Some(acc_v))
    }

    fn run_spatiotemporal(&mut self) -> Result<(), SchedulerError> {
        let end = self.end_cycle;
        self.label_phase(self.cfg.n_l, end, None, false)?;
        while self.now < end {
            let Some(acc_v) = self.retrain_phase(self.cfg.n_t, self.cfg.n_v)? else { break };
            if !self.label_phase(self.cfg.n_l, end, acc_v, true)? {
                break;
            }
        }
        Ok(())
    }

    fn run_windowed(&mut self, window_s: f64, n_t: usize, n_v: usize) -> Result<(), SchedulerError> {
        if !(window_s.is_finite() && window_s > 0.0) {
            return Err(SchedulerError::Window(window_s));
        }
        let end = self.end_cycle;
        let window_cycles = ((window_s * self.cfg.clock_hz as f64).round() as u64).max(1);
        self.label_phase(self.cfg.n_l, end, None, false)?;
        let mut window_start = 0u64;
        while window_start < end {
            let window_end = window_start.saturating_add(window_cycles).min(end);
            self.now = self.now.max(window_start);
            if self.retrain_phase(n_t, n_v)?.is_none() {
                break;
            }
            self.label_phase(usize::MAX, window_end, None, false)?;
            window_start = window_end;
        }
        Ok(())
    }

    fn finish(mut self, params: PolicyParams, partition: PartitionConfig) -> Result<ScheduleTrace, SchedulerError> {
        self.advance_inference(u64::MAX)?;
        let per_window_accuracy = window_accuracy(&self.outcomes, self.cfg.fps, params.report_window_s)?;
        let frames_dropped = self.outcomes.iter().filter(|o| **o == FrameOutcome::Dropped).count() as u64;
        let frames_correct = self.outcomes.iter().filter(|o| **o == FrameOutcome::Correct).count() as u64;
        Ok(ScheduleTrace {
            policy: params.policy,
            partition,
            config: self.cfg,
            window_s: params.window_s,
            phases: self.phases,
            drift_events: self.drift_events,
            per_window_accuracy,
            frames_total: self.outcomes.len() as u64,
            frames_dropped,
            frames_correct,
            frame_outcomes: self.outcomes,
        })
    }
}

/// Runs one policy over a whole stream.
pub fn run_policy<L: ContinualLearner>(
    stream: &Stream,
    learner: &mut L,
    student: &ModelSpec,
    teacher: &ModelSpec,
    cfg: &SchedulerConfig,
    partition: PartitionConfig,
    params: PolicyParams,
    seed: u64,
) -> Result<ScheduleTrace, SchedulerError> {
    let costs = CostModel::new(student.clone(), teacher.clone(), partition)?;
    let mut engine = Engine::new(stream, learner, cfg, costs, seed)?;
    match params.policy {
        Policy::Spatiotemporal => engine.run_spatiotemporal()?,
        Policy::Spatial => engine.run_windowed(params.window_s, cfg.n_t, cfg.n_v)?,
        Policy::FixedWindow => engine.run_windowed(params.window_s, cfg.c_b, cfg.c_b / 3)?,
    }
    engine.finish(params, partition)
}

#[allow(clippy::too_many_arguments)]
pub fn run_spatiotemporal<L: ContinualLearner>(
    stream: &Stream,
    learner: &mut L,
    student: &ModelSpec,
    teacher: &ModelSpec,
    cfg: &SchedulerConfig,
    partition: PartitionConfig,
    seed: u64,
) -> Result<ScheduleTrace, SchedulerError> {
    run_policy(stream, learner, student, teacher, cfg, partition, PolicyParams::new(Policy::Spatiotemporal), seed)
}

#[allow(clippy::too_many_arguments)]
pub fn run_spatial_only<L: ContinualLearner>(
    stream: &Stream,
    learner: &mut L,
    student: &ModelSpec,
    teacher: &ModelSpec,
    cfg: &SchedulerConfig,
    partition: PartitionConfig,
    window_s: f64,
    seed: u64,
) -> Result<ScheduleTrace, SchedulerError> {
    run_policy(stream, learner, student, teacher, cfg, partition, PolicyParams::new(Policy::Spatial).with_window(window_s), seed)
}

#[allow(clippy::too_many_arguments)]
pub fn run_fixed_window_baseline<L: ContinualLearner>(
    stream: &Stream,
    learner: &mut L,
    student: &ModelSpec,
    teacher: &ModelSpec,
    cfg: &SchedulerConfig,
    partition: PartitionConfig,
    window_s: f64,
    seed: u64,
) -> Result<ScheduleTrace, SchedulerError> {
    run_policy(stream, learner, student, teacher, cfg, partition, PolicyParams::new(Policy::FixedWindow).with_window(window_s), seed)
}
