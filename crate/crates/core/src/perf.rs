//! Performance model: lower dense-MLP kernels to GEMMs, cost them on a
//! sub-array, and pick the offline row split between T-SA and B-SA.
//!
//! GEMM shapes are written in the model's own terms (`batch x in x out` for
//! a forward layer). On the array every GEMM is issued as `C^T = B^T A^T`,
//! which puts output features on DPE rows and the batch on columns; with
//! batch-1 inference that is the only orientation in which extra rows help.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{gemm_cycles, configure_partition, GemmShape, PartitionConfig, ARRAY_COLS, ARRAY_ROWS};
use crate::mx::MxPrecision;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("model `{0}` has no layers")]
    NoLayers(String),
    #[error("model `{name}`: layer {index} has a zero dimension")]
    ZeroDim { name: String, index: usize },
    #[error("model `{name}`: layer {index} expects {expected} inputs but the previous layer produces {got}")]
    BrokenChain { name: String, index: usize, expected: u32, got: u32 },
    #[error("batch must be at least 1")]
    ZeroBatch,
    #[error("no B-SA size up to {max} rows meets {budget} cycles per frame (needs {best} cycles at {max} rows)")]
    Infeasible { budget: u64, best: u64, max: u32 },
    #[error("frame rate must be positive")]
    ZeroFps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelRole {
    Student,
    Teacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDims {
    pub in_features: u32,
    pub out_features: u32,
}

/// A dense MLP: a chain of `(in_features, out_features)` layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    name: String,
    layers: Vec<LayerDims>,
    role: ModelRole,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    name: String,
    role: ModelRole,
    layers: Vec<[u32; 2]>,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = PerfError;

    fn try_from(raw: RawModelSpec) -> Result<Self, Self::Error> {
        let layers = raw.layers.iter().map(|&[i, o]| LayerDims { in_features: i, out_features: o }).collect();
        ModelSpec::new(raw.name, layers, raw.role)
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(m: ModelSpec) -> Self {
        RawModelSpec {
            name: m.name,
            role: m.role,
            layers: m.layers.iter().map(|l| [l.in_features, l.out_features]).collect(),
        }
    }
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerDims>, role: ModelRole) -> Result<Self, PerfError> {
        let name = name.into();
        if layers.is_empty() {
            return Err(PerfError::NoLayers(name));
        }
        for (index, l) in layers.iter().enumerate() {
            if l.in_features == 0 || l.out_features == 0 {
                return Err(PerfError::ZeroDim { name, index });
            }
            if index > 0 && layers[index - 1].out_features != l.in_features {
                return Err(PerfError::BrokenChain {
                    name,
                    index,
                    expected: l.in_features,
                    got: layers[index - 1].out_features,
                });
            }
        }
        Ok(Self { name, layers, role })
    }

    /// Build from the width of every activation, input first.
    pub fn from_widths(name: impl Into<String>, widths: &[u32], role: ModelRole) -> Result<Self, PerfError> {
        let layers = widths
            .windows(2)
            .map(|w| LayerDims { in_features: w[0], out_features: w[1] })
            .collect();
        Self::new(name, layers, role)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerDims] {
        &self.layers
    }

    pub fn role(&self) -> ModelRole {
        self.role
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_features as usize
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features as usize
    }

    pub fn parameter_count(&self) -> u64 {
        self.layers.iter().map(|l| u64::from(l.in_features) * u64::from(l.out_features)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Inference,
    Labeling,
    Retraining,
    Validation,
}

impl KernelKind {
    /// Retraining runs in MX9, everything forward-only in MX6.
    pub fn default_precision(self) -> MxPrecision {
        match self {
            KernelKind::Retraining => MxPrecision::Mx9,
            _ => MxPrecision::Mx6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelJob {
    pub kind: KernelKind,
    pub model: ModelSpec,
    pub batch: u32,
    pub precision: MxPrecision,
}

impl KernelJob {
    pub fn new(kind: KernelKind, model: ModelSpec, batch: u32) -> Self {
        Self { kind, model, batch, precision: kind.default_precision() }
    }

    pub fn with_precision(mut self, precision: MxPrecision) -> Self {
        self.precision = precision;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lowering {
    pub gemms: Vec<GemmShape>,
    /// SGD update: one MAC per parameter, run on a single DPE row.
    pub update_macs: u64,
}

impl Lowering {
    /// A row of 16 DPEs retires 16 update MACs per cycle.
    pub fn update_cycles(&self) -> u64 {
        self.update_macs.div_ceil(u64::from(ARRAY_COLS))
    }
}

pub fn lower_to_gemms(job: &KernelJob) -> Result<Lowering, PerfError> {
    if job.batch == 0 {
        return Err(PerfError::ZeroBatch);
    }
    let b = job.batch;
    let layers = job.model.layers();
    let mut gemms: Vec<GemmShape> = layers
        .iter()
        .map(|l| GemmShape { m: b, k: l.in_features, n: l.out_features })
        .collect();
    let mut update_macs = 0;
    if job.kind == KernelKind::Retraining {
        for l in layers.iter().rev() {
            // dX = dY W (transposed weights), dW = X^T dY (transposed activations)
            gemms.push(GemmShape { m: b, k: l.out_features, n: l.in_features });
            gemms.push(GemmShape { m: l.in_features, k: b, n: l.out_features });
            update_macs += u64::from(l.in_features) * u64::from(l.out_features);
        }
    }
    Ok(Lowering { gemms, update_macs })
}

pub fn job_cycles(job: &KernelJob, sa_rows: u32) -> Result<u64, PerfError> {
    assert!(sa_rows >= 1, "sub-array needs at least one row");
    let lowering = lower_to_gemms(job)?;
    let gemm_total: u64 = lowering
        .gemms
        .iter()
        .map(|g| gemm_cycles(g.transposed(), sa_rows, ARRAY_COLS, job.precision).total_cycles)
        .sum();
    Ok(gemm_total + lowering.update_cycles())
}

/// Cycle budget per frame, `floor(clock / fps)`.
pub fn frame_budget(fps: u32, clock_hz: u64) -> u64 {
    clock_hz / u64::from(fps)
}

/// Smallest B-SA that keeps batch-1 student inference within the frame
/// budget; the rest of the array goes to the T-SA.
pub fn spatial_allocate(student: &ModelSpec, fps: u32, clock_hz: u64) -> Result<PartitionConfig, PerfError> {
    spatial_allocate_with(student, fps, clock_hz, KernelKind::Inference.default_precision())
}

pub fn spatial_allocate_with(student: &ModelSpec, fps: u32, clock_hz: u64, precision: MxPrecision) -> Result<PartitionConfig, PerfError> {
    if fps == 0 {
        return Err(PerfError::ZeroFps);
    }
    let job = KernelJob::new(KernelKind::Inference, student.clone(), 1).with_precision(precision);
    let max = ARRAY_ROWS - 1;
    let budget = frame_budget(fps, clock_hz);
    // cycles * fps <= clock, i.e. the frame fits within 1/fps seconds
    for r_bsa in 1..=max {
        let cycles = job_cycles(&job, r_bsa)?;
        if cycles * u64::from(fps) <= clock_hz {
            return Ok(configure_partition(ARRAY_ROWS - r_bsa).expect("1 <= r_bsa <= 15"));
        }
    }
    Err(PerfError::Infeasible { budget, best: job_cycles(&job, max)?, max })
}
