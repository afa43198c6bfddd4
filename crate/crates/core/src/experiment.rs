//! End-to-end runs: model preparation, the MLP-backed learner, and the
//! post-drift recovery analysis used to compare policies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fabric::PartitionConfig;
use crate::learner::{evaluate_quantized, LabelSource, Mlp, QuantizedMlp, Sample};
use crate::mx::MxPrecision;
use crate::perf::{spatial_allocate, KernelKind, ModelRole, ModelSpec};
use crate::scheduler::{run_policy, ContinualLearner, Policy, PolicyParams, ScheduleTrace, SchedulerConfig, SchedulerError};
use crate::seed::SeedTree;
use crate::stream::{Scenario, Stream, FEATURE_DIM, NUM_CLASSES};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Teacher examples, spread evenly over every segment of the scenario.
    pub teacher_samples: usize,
    /// Student examples, all from the first segment.
    pub student_samples: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { teacher_samples: 6000, student_samples: 2000, epochs: 15, learning_rate: 0.05, batch_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub student: ModelSpec,
    pub teacher: ModelSpec,
    pub pretrain: PretrainConfig,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            student: ModelSpec::from_widths("student", &[FEATURE_DIM as u32, 32, NUM_CLASSES as u32], ModelRole::Student)
                .expect("valid default student"),
            teacher: ModelSpec::from_widths("teacher", &[FEATURE_DIM as u32, 64, 64, NUM_CLASSES as u32], ModelRole::Teacher)
                .expect("valid default teacher"),
            pretrain: PretrainConfig::default(),
        }
    }
}

/// Student and teacher behind the scheduler's learner interface. Inference
/// and labeling run in MX6, retraining in MX9.
pub struct MlpLearner {
    student: Mlp,
    deployed: QuantizedMlp,
    teacher: QuantizedMlp,
    learning_rate: f32,
    batch_size: usize,
    epochs: usize,
}

impl MlpLearner {
    pub fn new(student: Mlp, teacher: &Mlp, cfg: &SchedulerConfig) -> Result<Self, SchedulerError> {
        let deployed = student.quantized(KernelKind::Inference.default_precision())?;
        let teacher = teacher.quantized(KernelKind::Labeling.default_precision())?;
        Ok(Self {
            student,
            deployed,
            teacher,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs_per_retrain,
        })
    }

    pub fn student(&self) -> &Mlp {
        &self.student
    }
}

impl ContinualLearner for MlpLearner {
    fn infer(&mut self, frame: &Sample) -> Result<usize, SchedulerError> {
        Ok(self.deployed.predict(&frame.features)?)
    }

    fn label(&mut self, frame: &Sample) -> Result<usize, SchedulerError> {
        Ok(self.teacher.predict(&frame.features)?)
    }

    fn retrain(&mut self, d_t: &[Sample], rng: &mut ChaCha8Rng) -> Result<(), SchedulerError> {
        let precision = KernelKind::Retraining.default_precision();
        self.student.retrain(d_t, self.epochs, self.learning_rate, self.batch_size, precision, rng)?;
        Ok(())
    }

    fn validate(&mut self, d_v: &[Sample]) -> Result<f64, SchedulerError> {
        let snapshot = self.student.quantized(KernelKind::Validation.default_precision())?;
        Ok(evaluate_quantized(&snapshot, d_v, LabelSource::Teacher)?)
    }

    fn evaluate(&mut self, d_l: &[Sample]) -> Result<f64, SchedulerError> {
        self.validate(d_l)
    }

    fn deploy(&mut self) -> Result<(), SchedulerError> {
        self.deployed = self.student.quantized(KernelKind::Inference.default_precision())?;
        Ok(())
    }
}

/// A scenario bound to a seed with its pre-trained models.
pub struct Prepared {
    pub stream: Stream,
    pub student: Mlp,
    pub teacher: Mlp,
    pub seeds: SeedTree,
}

fn draw_set(stream: &Stream, segments: &[usize], count: usize, rng: &mut impl Rng) -> (Matrix, Vec<usize>) {
    let mut data = Vec::with_capacity(count * FEATURE_DIM);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let (x, y) = stream.draw(segments[i % segments.len()], rng);
        data.extend_from_slice(&x);
        labels.push(y);
    }
    (Matrix::from_vec(count, FEATURE_DIM, data), labels)
}

/// Builds the stream and pre-trains both models offline in FP32: the
/// teacher on the union of all segments, the student on the first segment.
pub fn prepare(scenario: &Scenario, models: &ModelsConfig, seed: u64) -> Result<Prepared, SchedulerError> {
    let seeds = SeedTree::new(seed);
    let stream = Stream::new(scenario, seeds.seed("stream"))?;
    let mut init = seeds.rng("init");
    let mut teacher = Mlp::init(models.teacher.clone(), &mut init);
    let mut student = Mlp::init(models.student.clone(), &mut init);
    if stream.segment_count() > 0 {
        let p = &models.pretrain;
        let mut rng = seeds.rng("pretrain");
        let all: Vec<usize> = (0..stream.segment_count()).collect();
        let (x, y) = draw_set(&stream, &all, p.teacher_samples, &mut rng);
        if !y.is_empty() {
            teacher.fit_fp32(&x, &y, p.epochs, p.learning_rate, p.batch_size, &mut rng)?;
        }
        let (x, y) = draw_set(&stream, &[0], p.student_samples, &mut rng);
        if !y.is_empty() {
            student.fit_fp32(&x, &y, p.epochs, p.learning_rate, p.batch_size, &mut rng)?;
        }
    }
    Ok(Prepared { stream, student, teacher, seeds })
}

pub fn default_partition(models: &ModelsConfig, cfg: &SchedulerConfig) -> Result<PartitionConfig, SchedulerError> {
    Ok(spatial_allocate(&models.student, cfg.fps, cfg.clock_hz)?)
}

pub fn run_prepared(
    prepared: &Prepared,
    models: &ModelsConfig,
    cfg: &SchedulerConfig,
    partition: PartitionConfig,
    params: PolicyParams,
) -> Result<ScheduleTrace, SchedulerError> {
    let mut learner = MlpLearner::new(prepared.student.clone(), &prepared.teacher, cfg)?;
    run_policy(
        &prepared.stream,
        &mut learner,
        &models.student,
        &models.teacher,
        cfg,
        partition,
        params,
        prepared.seeds.seed("scheduler"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    /// Span before a drift that sets the reference accuracy.
    pub pre_window_s: f64,
    /// Span of the sliding accuracy bucket after a drift.
    pub bucket_s: f64,
    pub step_s: f64,
    /// Accuracy points (as a fraction) the bucket may sit below the reference.
    pub tolerance: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { pre_window_s: 30.0, bucket_s: 10.0, step_s: 1.0, tolerance: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRecovery {
    pub drift_s: f64,
    pub pre_accuracy: f64,
    /// Seconds from the drift until the sliding bucket is back within
    /// tolerance; capped at the time to the next drift when it never is.
    pub recovery_s: f64,
    pub censored: bool,
}

/// Recovery after each drift time. A bucket starting `s` seconds after the
/// drift counts as recovered when its accuracy is at least the pre-drift
/// accuracy minus the tolerance.
pub fn recovery_times(trace: &ScheduleTrace, drift_times: &[f64], end_s: f64, cfg: &RecoveryConfig) -> Vec<DriftRecovery> {
    let mut out = Vec::with_capacity(drift_times.len());
    for (i, &t) in drift_times.iter().enumerate() {
        let next = drift_times.get(i + 1).copied().unwrap_or(end_s);
        let Some(pre) = trace.accuracy_between((t - cfg.pre_window_s).max(0.0), t) else { continue };
        let mut recovered = None;
        let mut k = 0u64;
        loop {
            let s = k as f64 * cfg.step_s;
            if t + s + cfg.bucket_s > next + 1e-9 {
                break;
            }
            if let Some(acc) = trace.accuracy_between(t + s, t + s + cfg.bucket_s) {
                if acc >= pre - cfg.tolerance {
                    recovered = Some(s);
                    break;
                }
            }
            k += 1;
        }
        out.push(DriftRecovery {
            drift_s: t,
            pre_accuracy: pre,
            recovery_s: recovered.unwrap_or(next - t),
            censored: recovered.is_none(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    pub partition: PartitionConfig,
    pub mean_accuracy: f64,
    pub drift_count: usize,
    pub drop_rate: f64,
    pub frames_total: u64,
    pub frames_dropped: u64,
    pub retrain_phases: usize,
    pub mean_recovery_s: f64,
    pub recoveries: Vec<DriftRecovery>,
}

pub fn summarize(trace: &ScheduleTrace, scenario: &Scenario, seed: u64, recovery: &RecoveryConfig) -> RunSummary {
    let recoveries = recovery_times(trace, &scenario.drift_times(), scenario.total_duration(), recovery);
    let mean_recovery_s = if recoveries.is_empty() {
        0.0
    } else {
        recoveries.iter().map(|r| r.recovery_s).sum::<f64>() / recoveries.len() as f64
    };
    RunSummary {
        scenario: scenario.name.clone(),
        policy: trace.policy,
        seed,
        partition: trace.partition,
        mean_accuracy: trace.mean_window_accuracy(),
        drift_count: trace.drift_events.len(),
        drop_rate: trace.drop_rate(),
        frames_total: trace.frames_total,
        frames_dropped: trace.frames_dropped,
        retrain_phases: trace.phases.iter().filter(|p| p.kind == crate::scheduler::PhaseKind::Retrain).count(),
        mean_recovery_s,
        recoveries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: Policy,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub mean_recovery_s: f64,
}

/// Runs every policy on every `(scenario, seed)` pair, sharing the
/// pre-trained models across policies, and aggregates per policy.
pub fn compare_policies(
    scenarios: &[Scenario],
    seeds: &[u64],
    models: &ModelsConfig,
    cfg: &SchedulerConfig,
    params: &[PolicyParams],
    recovery: &RecoveryConfig,
) -> Result<(Vec<PolicyAggregate>, Vec<RunSummary>), SchedulerError> {
    let partition = default_partition(models, cfg)?;
    let jobs: Vec<(&Scenario, u64)> = scenarios.iter().flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let nested: Vec<Vec<RunSummary>> = jobs
        .par_iter()
        .map(|&(scenario, seed)| {
            let prepared = prepare(scenario, models, seed)?;
            params
                .iter()
                .map(|p| {
                    let trace = run_prepared(&prepared, models, cfg, partition, *p)?;
                    Ok(summarize(&trace, scenario, seed, recovery))
                })
                .collect::<Result<Vec<_>, SchedulerError>>()
        })
        .collect::<Result<_, _>>()?;
    let runs: Vec<RunSummary> = nested.into_iter().flatten().collect();
    let aggregates = params
        .iter()
        .map(|p| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.policy == p.policy).collect();
            let n = mine.len().max(1) as f64;
            PolicyAggregate {
                policy: p.policy,
                runs: mine.len(),
                mean_accuracy: mine.iter().map(|r| r.mean_accuracy).sum::<f64>() / n,
                mean_recovery_s: mine.iter().map(|r| r.mean_recovery_s).sum::<f64>() / n,
            }
        })
        .collect();
    Ok((aggregates, runs))
}

/// Student MX6 accuracy against true labels on fresh draws from a segment.
pub fn segment_accuracy(prepared: &Prepared, model: &Mlp, segment: usize, count: usize, rng: &mut impl Rng) -> Result<f64, SchedulerError> {
    let q = model.quantized(MxPrecision::Mx6)?;
    let samples: Vec<Sample> = (0..count)
        .map(|i| {
            let (features, true_label) = prepared.stream.draw(segment, rng);
            Sample { features, true_label, teacher_label: None, timestamp: 0.0, frame: i as u64 }
        })
        .collect();
    Ok(evaluate_quantized(&q, &samples, LabelSource::Truth)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::configure_partition;
    use crate::scheduler::FrameOutcome;

    fn trace_from(outcomes: Vec<FrameOutcome>) -> ScheduleTrace {
        ScheduleTrace {
            policy: Policy::Spatiotemporal,
            partition: configure_partition(15).unwrap(),
            config: SchedulerConfig::default(),
            window_s: 60.0,
            phases: vec![],
            drift_events: vec![],
            per_window_accuracy: vec![],
            frames_total: outcomes.len() as u64,
            frames_dropped: 0,
            frames_correct: 0,
            frame_outcomes: outcomes,
        }
    }

    /// One outcome per frame at 30 fps from per-second accuracy levels:
    /// within each second the first `round(acc * 30)` frames are correct.
    fn outcomes(per_second: &[f64]) -> Vec<FrameOutcome> {
        per_second
            .iter()
            .flat_map(|&a| {
                let k = (a * 30.0).round() as usize;
                (0..30).map(move |i| if i < k { FrameOutcome::Correct } else { FrameOutcome::Incorrect })
            })
            .collect()
    }

    #[test]
    fn recovery_is_first_bucket_back_within_tolerance() {
        // 40 s at 0.9, drift at 40: 15 s at 0.5, then 0.9 until 100
        let mut acc = vec![0.9; 40];
        acc.extend(vec![0.5; 15]);
        acc.extend(vec![0.9; 45]);
        let trace = trace_from(outcomes(&acc));
        let r = recovery_times(&trace, &[40.0], 100.0, &RecoveryConfig::default());
        assert_eq!(r.len(), 1);
        assert!((r[0].pre_accuracy - 0.9).abs() < 1e-12);
        // bucket [40+s, 50+s) holds (15-s) seconds at 0.5; needs mean >= 0.85
        // 0.9 - 0.4 * (15 - s) / 10 >= 0.85  <=>  s >= 13.75
        assert_eq!(r[0].recovery_s, 14.0);
        assert!(!r[0].censored);
    }

    #[test]
    fn unaffected_drift_recovers_immediately_and_lost_one_is_censored() {
        let mut acc = vec![0.8; 60];
        acc.extend(vec![0.9; 60]);
        acc.extend(vec![0.2; 60]);
        let trace = trace_from(outcomes(&acc));
        let r = recovery_times(&trace, &[60.0, 120.0], 180.0, &RecoveryConfig::default());
        assert_eq!(r[0].recovery_s, 0.0);
        assert_eq!(r[1].recovery_s, 60.0);
        assert!(r[1].censored);
    }

    #[test]
    fn summary_mean_is_over_drifts() {
        let mut acc = vec![0.9; 30];
        acc.extend(vec![0.0; 30]);
        let trace = trace_from(outcomes(&acc));
        let scenario = Scenario {
            name: "two".into(),
            fps: 30,
            segments: vec![
                crate::stream::Segment { duration_s: 30.0, priors: crate::stream::uniform_priors(&[0]), shift: Default::default(), concept: 0 },
                crate::stream::Segment { duration_s: 30.0, priors: crate::stream::uniform_priors(&[1]), shift: Default::default(), concept: 0 },
            ],
        };
        let s = summarize(&trace, &scenario, 3, &RecoveryConfig::default());
        assert_eq!(s.recoveries.len(), 1);
        assert_eq!(s.mean_recovery_s, 30.0);
    }
}
