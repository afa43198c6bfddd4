#![allow(dead_code)]
//! Oracles and fixtures shared by the integration tests and the
//! acceptance runner.

use dacapo_core::fabric::{configure_partition, PartitionConfig};
use dacapo_core::learner::{cosine_similarity, Mlp, Sample};
use dacapo_core::mx::MxPrecision;
use dacapo_core::perf::{ModelRole, ModelSpec};
use dacapo_core::scheduler::*;
use dacapo_core::stream::{uniform_priors, CovariateShift, Scenario, Segment, Stream};
use dacapo_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Learner that replays scripted accuracies, predicts every frame
/// correctly, and records what it was given.
pub struct Stub {
    pub acc_v: Vec<f64>,
    pub acc_l: Vec<f64>,
    pub validations: usize,
    pub evaluations: usize,
    pub retrain_frames: Vec<Vec<u64>>,
}

impl Stub {
    pub fn new(acc_v: Vec<f64>, acc_l: Vec<f64>) -> Self {
        Self { acc_v, acc_l, validations: 0, evaluations: 0, retrain_frames: Vec::new() }
    }

    pub fn next(seq: &[f64], i: usize) -> f64 {
        seq[i.min(seq.len() - 1)]
    }
}

impl ContinualLearner for Stub {
    fn infer(&mut self, frame: &Sample) -> Result<usize, SchedulerError> {
        Ok(frame.true_label)
    }

    fn label(&mut self, frame: &Sample) -> Result<usize, SchedulerError> {
        Ok(frame.true_label)
    }

    fn retrain(&mut self, d_t: &[Sample], _rng: &mut ChaCha8Rng) -> Result<(), SchedulerError> {
        self.retrain_frames.push(d_t.iter().map(|s| s.frame).collect());
        Ok(())
    }

    fn validate(&mut self, _d_v: &[Sample]) -> Result<f64, SchedulerError> {
        let v = Self::next(&self.acc_v, self.validations);
        self.validations += 1;
        Ok(v)
    }

    fn evaluate(&mut self, _d_l: &[Sample]) -> Result<f64, SchedulerError> {
        let v = Self::next(&self.acc_l, self.evaluations);
        self.evaluations += 1;
        Ok(v)
    }

    fn deploy(&mut self) -> Result<(), SchedulerError> {
        Ok(())
    }
}

pub fn scenario(seconds: f64) -> Scenario {
    Scenario {
        name: "flat".into(),
        fps: 30,
        segments: vec![Segment { duration_s: seconds, priors: uniform_priors(&[0, 1, 2, 3]), shift: CovariateShift::default(), concept: 0 }],
    }
}

pub fn models() -> (ModelSpec, ModelSpec) {
    (
        ModelSpec::from_widths("s", &[16, 32, 8], ModelRole::Student).unwrap(),
        ModelSpec::from_widths("t", &[16, 64, 64, 8], ModelRole::Teacher).unwrap(),
    )
}

pub fn partition() -> PartitionConfig {
    configure_partition(15).unwrap()
}

pub fn run(stub: &mut Stub, cfg: &SchedulerConfig, seconds: f64) -> ScheduleTrace {
    let stream = Stream::new(&scenario(seconds), 7).unwrap();
    let (s, t) = models();
    run_spatiotemporal(&stream, stub, &s, &t, cfg, partition(), 11).unwrap()
}

pub fn label_phases(trace: &ScheduleTrace) -> Vec<&PhaseReport> {
    trace.phases.iter().filter(|p| p.kind == PhaseKind::Label).collect()
}

/// Frames the B-SA can serve when each takes `cost` cycles, computed from
/// arrival times independently of the scheduler.
pub fn served_oracle(frames: u64, clock: u64, fps: u64, cost: u64) -> Vec<bool> {
    let mut free = 0u128;
    (0..frames)
        .map(|i| {
            let arrival = (u128::from(i) * u128::from(clock)).div_ceil(u128::from(fps));
            if arrival >= free {
                free = arrival + u128::from(cost);
                true
            } else {
                false
            }
        })
        .collect()
}

/// Mean cross-entropy of a ReLU MLP evaluated entirely in f64.
pub fn loss_f64(weights: &[Vec<Vec<f64>>], x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(labels) {
        let mut act = row.clone();
        for (l, w) in weights.iter().enumerate() {
            let mut next: Vec<f64> = w.iter().map(|wr| wr.iter().zip(&act).map(|(a, b)| a * b).sum()).collect();
            if l + 1 < weights.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = next;
        }
        let max = act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = act.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        total += lse - act[label];
    }
    total / x.len() as f64
}

pub fn to_f64(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).iter().map(|&v| f64::from(v)).collect()).collect()
}

pub fn setup(seed: u64, widths: &[u32]) -> (Mlp, Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::from_widths("g", widths, ModelRole::Student).unwrap();
    let classes = *widths.last().unwrap();
    let model = Mlp::init(spec, &mut rng);
    let x = Matrix::from_fn(16, widths[0] as usize, |_, _| rng.random_range(-1.5..1.5));
    let labels = (0..16).map(|_| rng.random_range(0..classes as usize)).collect();
    (model, x, labels)
}

/// Largest relative error between central differences of the f64 oracle
/// and the FP32 analytic gradient of a `6 -> 8 -> 4` net (80 parameters).
pub fn finite_difference_error(seed: u64) -> f64 {
    let (model, x, labels) = setup(seed, &[6, 8, 4]);
    assert!(model.spec().parameter_count() <= 100);
    let grads = model.gradients_fp32(&x, &labels).unwrap();
    let xs = to_f64(&x);
    let base: Vec<Vec<Vec<f64>>> = model.weights().iter().map(to_f64).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (l, w) in base.iter().enumerate() {
        for r in 0..w.len() {
            for c in 0..w[r].len() {
                let mut plus = base.clone();
                plus[l][r][c] += h;
                let mut minus = base.clone();
                minus[l][r][c] -= h;
                let n = (loss_f64(&plus, &xs, &labels) - loss_f64(&minus, &xs, &labels)) / (2.0 * h);
                let a = f64::from(grads.layers[l].get(r, c));
                worst = worst.max((n - a).abs() / n.abs().max(a.abs()).max(1e-8));
            }
        }
    }
    let loss = loss_f64(&base, &xs, &labels);
    assert!((f64::from(grads.loss) - loss).abs() < 1e-5 * loss.max(1.0));
    worst
}

/// Cosine similarity of MX9 and FP32 weight gradients for one random
/// `16 -> 24 -> 8` net.
pub fn mx9_gradient_cosine(seed: u64) -> f64 {
    let (model, x, labels) = setup(seed, &[16, 24, 8]);
    let fp = model.gradients_fp32(&x, &labels).unwrap();
    let mx = model.gradients_mx(&x, &labels, MxPrecision::Mx9).unwrap();
    cosine_similarity(&fp.flatten(), &mx.flatten())
}
