//! Student and teacher MLPs.
//!
//! Master weights are FP32 (`out x in` per layer, no biases, ReLU between
//! layers). The MX path quantizes weights and activations per GEMM and
//! reduces with block dot products, exactly as the array would; the FP32
//! path is the plain-arithmetic reference used for gradient checks and
//! offline pre-training.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{FormatError, MxError};
use crate::fabric::convert_outputs;
use crate::mx::{lane_dot, quantize_tensor, quantize_vector, BlockingMajor, MxPrecision, MxTensor};
use crate::perf::ModelSpec;
use crate::tensor::{ByteCursor, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCW1";
pub const DEFAULT_LEARNING_RATE: f32 = 1e-3;
pub const DEFAULT_BATCH: usize = 16;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("expected {expected} features, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("sample {index} has no teacher label")]
    Unlabeled { index: usize },
    #[error("accuracy is undefined on an empty sample set")]
    EmptySet,
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("weights do not match the model spec: {0}")]
    WeightShape(String),
    #[error(transparent)]
    Mx(#[from] MxError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f32>,
    pub true_label: usize,
    /// Set once the sample has been through the labeling phase.
    pub teacher_label: Option<usize>,
    /// Stream time in seconds.
    pub timestamp: f64,
    pub frame: u64,
}

impl Sample {
    pub fn labeled(mut self, label: usize) -> Self {
        self.teacher_label = Some(label);
        self
    }
}

/// Which label accuracy is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Teacher,
    Truth,
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f32, Matrix) {
    let batch = logits.rows();
    let mut grad = Matrix::zeros(batch, logits.cols());
    let mut loss = 0.0f64;
    for b in 0..batch {
        let row = logits.row(b);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        loss += f64::from(sum.ln() + max - row[labels[b]]);
        for (c, e) in exps.iter().enumerate() {
            let p = e / sum;
            let target = if c == labels[b] { 1.0 } else { 0.0 };
            grad.set(b, c, (p - target) / batch as f32);
        }
    }
    ((loss / batch as f64) as f32, grad)
}

fn matmul_abt(a: &Matrix, b: &Matrix) -> Matrix {
    // a: p x k, b: q x k  ->  p x q
    Matrix::from_fn(a.rows(), b.rows(), |i, j| a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum())
}

fn matmul_atb(a: &Matrix, b: &Matrix) -> Matrix {
    // a: k x p, b: k x q  ->  p x q
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for t in 0..a.rows() {
        for i in 0..a.cols() {
            let av = a.get(t, i);
            for j in 0..b.cols() {
                let cur = out.get(i, j);
                out.set(i, j, cur + av * b.get(t, j));
            }
        }
    }
    out
}

fn matmul_ab(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for t in 0..a.cols() {
            let av = a.get(i, t);
            for j in 0..b.cols() {
                let cur = out.get(i, j);
                out.set(i, j, cur + av * b.get(t, j));
            }
        }
    }
    out
}

/// Reduce two MX tensors lane against lane: `out[i][j] = lhs.lane(i) . rhs.lane(j)`.
fn mx_lane_product(lhs: &MxTensor, rhs: &MxTensor) -> Result<Matrix, MxError> {
    let mut out = Matrix::zeros(lhs.lanes(), rhs.lanes());
    for i in 0..lhs.lanes() {
        let a = lhs.lane(i);
        for j in 0..rhs.lanes() {
            out.set(i, j, lane_dot(a, rhs.lane(j))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStep {
    pub weights: Vec<Matrix>,
    pub loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Matrix>,
    pub loss: f32,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f32> {
        self.layers.iter().flat_map(|m| m.data().iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: ModelSpec,
    weights: Vec<Matrix>,
}

impl Mlp {
    pub fn new(spec: ModelSpec, weights: Vec<Matrix>) -> Result<Self, LearnerError> {
        if weights.len() != spec.layers().len() {
            return Err(LearnerError::WeightShape(format!("{} matrices for {} layers", weights.len(), spec.layers().len())));
        }
        for (i, (w, l)) in weights.iter().zip(spec.layers()).enumerate() {
            if w.rows() != l.out_features as usize || w.cols() != l.in_features as usize {
                return Err(LearnerError::WeightShape(format!(
                    "layer {i} is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    l.out_features,
                    l.in_features
                )));
            }
        }
        Ok(Self { spec, weights })
    }

    /// He-normal initialisation.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Self {
        let weights = spec
            .layers()
            .iter()
            .map(|l| {
                let normal = Normal::new(0.0f32, (2.0 / l.in_features as f32).sqrt()).expect("positive std");
                Matrix::from_fn(l.out_features as usize, l.in_features as usize, |_, _| normal.sample(rng))
            })
            .collect();
        Self { spec, weights }
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        let weights = spec
            .layers()
            .iter()
            .map(|l| Matrix::zeros(l.out_features as usize, l.in_features as usize))
            .collect();
        Self { spec, weights }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<Matrix>) -> Result<(), LearnerError> {
        *self = Mlp::new(self.spec.clone(), weights)?;
        Ok(())
    }

    fn check_dim(&self, got: usize) -> Result<(), LearnerError> {
        let expected = self.spec.input_dim();
        if got != expected {
            return Err(LearnerError::DimMismatch { expected, got });
        }
        Ok(())
    }

    /// Snapshot with every weight matrix pre-quantized, for repeated inference.
    pub fn quantized(&self, precision: MxPrecision) -> Result<QuantizedMlp, LearnerError> {
        let layers = self
            .weights
            .iter()
            .map(|w| quantize_tensor(w, precision, BlockingMajor::RowMajor))
            .collect::<Result<_, _>>()?;
        Ok(QuantizedMlp { input_dim: self.spec.input_dim(), precision, layers })
    }

    pub fn forward(&self, x: &[f32], precision: MxPrecision) -> Result<Vec<f32>, LearnerError> {
        self.quantized(precision)?.forward(x)
    }

    pub fn forward_fp32(&self, x: &[f32]) -> Result<Vec<f32>, LearnerError> {
        self.check_dim(x.len())?;
        let mut act = Matrix::from_vec(1, x.len(), x.to_vec());
        for (l, w) in self.weights.iter().enumerate() {
            act = matmul_abt(&act, w);
            if l + 1 < self.weights.len() {
                relu_in_place(&mut act);
            }
        }
        Ok(act.into_vec())
    }

    pub fn loss_fp32(&self, x: &Matrix, labels: &[usize]) -> Result<f32, LearnerError> {
        Ok(self.gradients_fp32(x, labels)?.loss)
    }

    pub fn gradients_fp32(&self, x: &Matrix, labels: &[usize]) -> Result<Gradients, LearnerError> {
        self.check_dim(x.cols())?;
        let depth = self.weights.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut act = x.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let z = matmul_abt(&act, w);
            inputs.push(act);
            act = z.clone();
            if l + 1 < depth {
                relu_in_place(&mut act);
            }
            pre.push(z);
        }
        let (loss, mut dz) = softmax_cross_entropy(&act, labels);
        let mut grads = vec![Matrix::zeros(0, 0); depth];
        for l in (0..depth).rev() {
            grads[l] = matmul_atb(&dz, &inputs[l]);
            if l > 0 {
                let mut da = matmul_ab(&dz, &self.weights[l]);
                let z = &pre[l - 1];
                for (g, &zv) in da.data_mut().iter_mut().zip(z.data()) {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                }
                dz = da;
            }
        }
        Ok(Gradients { layers: grads, loss })
    }

    /// Gradients with every GEMM in MX: forward on row-major operands,
    /// grad-input on column-major weights, grad-weight on column-major
    /// activations and quantized output gradients.
    pub fn gradients_mx(&self, x: &Matrix, labels: &[usize], precision: MxPrecision) -> Result<Gradients, LearnerError> {
        self.check_dim(x.cols())?;
        let depth = self.weights.len();
        let mut col_inputs: Vec<MxTensor> = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut act = x.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let conv = convert_outputs(&act, precision, true)?;
            let wq = quantize_tensor(w, precision, BlockingMajor::RowMajor)?;
            let z = mx_lane_product(conv.row_major(), &wq)?;
            col_inputs.push(conv.col_major().expect("training conversion").clone());
            act = z.clone();
            if l + 1 < depth {
                relu_in_place(&mut act);
            }
            pre.push(z);
        }
        let (loss, mut dz) = softmax_cross_entropy(&act, labels);
        let mut grads = vec![Matrix::zeros(0, 0); depth];
        for l in (0..depth).rev() {
            let dzq = convert_outputs(&dz, precision, true)?;
            // dW[o][i] = sum_b dZ[b][o] A[b][i]: both blocked along the batch
            grads[l] = mx_lane_product(dzq.col_major().expect("training conversion"), &col_inputs[l])?;
            if l > 0 {
                // dA[b][i] = sum_o dZ[b][o] W[o][i]: W blocked along outputs
                let w_cols = quantize_tensor(&self.weights[l], precision, BlockingMajor::ColMajor)?;
                let mut da = mx_lane_product(dzq.row_major(), &w_cols)?;
                for (g, &zv) in da.data_mut().iter_mut().zip(pre[l - 1].data()) {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                }
                dz = da;
            }
        }
        Ok(Gradients { layers: grads, loss })
    }

    fn batch_matrix(&self, batch: &[Sample]) -> Result<(Matrix, Vec<usize>), LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        let dim = self.spec.input_dim();
        let mut data = Vec::with_capacity(batch.len() * dim);
        let mut labels = Vec::with_capacity(batch.len());
        for (index, s) in batch.iter().enumerate() {
            self.check_dim(s.features.len())?;
            data.extend_from_slice(&s.features);
            labels.push(s.teacher_label.ok_or(LearnerError::Unlabeled { index })?);
        }
        Ok((Matrix::from_vec(batch.len(), dim, data), labels))
    }

    /// One SGD step in MX9 against teacher labels. Returns the next weights
    /// and the mean loss before the update.
    pub fn train_step(&self, batch: &[Sample], lr: f32) -> Result<TrainStep, LearnerError> {
        self.train_step_with(batch, lr, MxPrecision::Mx9)
    }

    pub fn train_step_with(&self, batch: &[Sample], lr: f32, precision: MxPrecision) -> Result<TrainStep, LearnerError> {
        let (x, labels) = self.batch_matrix(batch)?;
        let grads = self.gradients_mx(&x, &labels, precision)?;
        Ok(TrainStep { weights: self.sgd(&grads, lr), loss: grads.loss })
    }

    fn sgd(&self, grads: &Gradients, lr: f32) -> Vec<Matrix> {
        self.weights
            .iter()
            .zip(&grads.layers)
            .map(|(w, g)| {
                let mut next = w.clone();
                for (v, d) in next.data_mut().iter_mut().zip(g.data()) {
                    *v -= lr * d;
                }
                next
            })
            .collect()
    }

    /// `epochs` shuffled passes of minibatch SGD over `samples`; returns the
    /// mean loss of the last epoch.
    pub fn retrain(
        &mut self,
        samples: &[Sample],
        epochs: usize,
        lr: f32,
        batch: usize,
        precision: MxPrecision,
        rng: &mut impl Rng,
    ) -> Result<f32, LearnerError> {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut last = 0.0;
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut steps = 0;
            for chunk in order.chunks(batch.max(1)) {
                let b: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let step = self.train_step_with(&b, lr, precision)?;
                self.weights = step.weights;
                total += step.loss;
                steps += 1;
            }
            if steps > 0 {
                last = total / steps as f32;
            }
        }
        Ok(last)
    }

    /// Offline FP32 training on raw `(features, label)` pairs.
    pub fn fit_fp32(
        &mut self,
        features: &Matrix,
        labels: &[usize],
        epochs: usize,
        lr: f32,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<f32, LearnerError> {
        self.check_dim(features.cols())?;
        let mut order: Vec<usize> = (0..features.rows()).collect();
        let mut last = 0.0;
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut steps = 0;
            for chunk in order.chunks(batch.max(1)) {
                let x = Matrix::from_fn(chunk.len(), features.cols(), |r, c| features.get(chunk[r], c));
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let grads = self.gradients_fp32(&x, &y)?;
                self.weights = self.sgd(&grads, lr);
                total += grads.loss;
                steps += 1;
            }
            if steps > 0 {
                last = total / steps as f32;
            }
        }
        Ok(last)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.weights.len() as u32).to_le_bytes())?;
        for m in &self.weights {
            w.write_all(&(m.cols() as u32).to_le_bytes())?;
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
        }
        for m in &self.weights {
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(spec: ModelSpec, r: R) -> Result<Self, LearnerError> {
        let weights = read_checkpoint(r)?;
        Mlp::new(spec, weights)
    }
}

/// Weight matrices from a `DCW1` checkpoint: magic, `u32` layer count,
/// `(in, out)` as `u32` pairs per layer, then each layer's `out x in` FP32
/// data row-major, all little-endian.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<Matrix>, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = ByteCursor::new(&bytes);
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic { expected: "DCW1" });
    }
    let count = cur.u32("layer count")? as usize;
    let mut dims = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let inputs = cur.u32("layer inputs")? as usize;
        let outputs = cur.u32("layer outputs")? as usize;
        dims.push((outputs, inputs));
    }
    let mut weights = Vec::with_capacity(count);
    for (rows, cols) in dims {
        let mut data = Vec::with_capacity((rows * cols).min(1 << 24));
        for _ in 0..rows * cols {
            data.push(f32::from_le_bytes(cur.array::<4>("weights")?));
        }
        weights.push(Matrix::from_vec(rows, cols, data));
    }
    cur.finish()?;
    Ok(weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMlp {
    input_dim: usize,
    precision: MxPrecision,
    layers: Vec<MxTensor>,
}

impl QuantizedMlp {
    pub fn precision(&self) -> MxPrecision {
        self.precision
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>, LearnerError> {
        if x.len() != self.input_dim {
            return Err(LearnerError::DimMismatch { expected: self.input_dim, got: x.len() });
        }
        let mut act = x.to_vec();
        for (l, w) in self.layers.iter().enumerate() {
            let xq = quantize_vector(&act, self.precision)?;
            let mut next = Vec::with_capacity(w.lanes());
            for o in 0..w.lanes() {
                next.push(lane_dot(&xq, w.lane(o))?);
            }
            if l + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = next;
        }
        Ok(act)
    }

    pub fn predict(&self, x: &[f32]) -> Result<usize, LearnerError> {
        Ok(argmax(&self.forward(x)?))
    }
}

/// Fraction of samples whose argmax prediction matches the chosen label.
pub fn evaluate(model: &Mlp, samples: &[Sample], precision: MxPrecision, source: LabelSource) -> Result<f64, LearnerError> {
    evaluate_quantized(&model.quantized(precision)?, samples, source)
}

pub fn evaluate_quantized(model: &QuantizedMlp, samples: &[Sample], source: LabelSource) -> Result<f64, LearnerError> {
    if samples.is_empty() {
        return Err(LearnerError::EmptySet);
    }
    let mut correct = 0usize;
    for (index, s) in samples.iter().enumerate() {
        let label = match source {
            LabelSource::Teacher => s.teacher_label.ok_or(LearnerError::Unlabeled { index })?,
            LabelSource::Truth => s.true_label,
        };
        if model.predict(&s.features)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    dot / (na * nb)
}
