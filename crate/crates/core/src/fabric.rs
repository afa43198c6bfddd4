//! The 16x16 DPE systolic array, split by rows into a top (T-SA) and bottom
//! (B-SA) sub-accelerator, running output-stationary GEMMs.
//!
//! Cycle model per output tile with `r` active rows and `c` active columns
//! and `s = ceil(k/16)` reduction steps:
//!
//! * fill    = r + c - 2   (operand skew until the far corner DPE starts)
//! * compute = s * dpe_cycles(precision)
//! * drain   = r           (results shift out of each column one per cycle)
//!
//! Tiles are traversed row-major and do not overlap. [`gemm_cycles`] is the
//! closed form; [`event_sim_gemm`] replays every tile DPE by DPE and is the
//! ground truth the closed form is checked against.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpe::{dpe_execute, DpeError, DpeMode};
use crate::error::MxError;
use crate::mx::{quantize_tensor, BlockingMajor, MxPrecision, MxTensor, BLOCK_SIZE};
use crate::tensor::Matrix;

pub const ARRAY_ROWS: u32 = 16;
pub const ARRAY_COLS: u32 = 16;
pub const SRAM_BYTES: u64 = 96 * 1024;
/// Largest m, k or n the event simulator accepts.
pub const EVENT_SIM_LIMIT: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("T-SA row count {0} out of range 1..=15")]
    PartitionRange(u32),
    #[error("invalid partition: {r_tsa} + {r_bsa} rows must equal {ARRAY_ROWS} with both at least 1")]
    InvalidPartition { r_tsa: u32, r_bsa: u32 },
    #[error("GEMM dimensions must be positive, got {m}x{k}x{n}")]
    EmptyGemm { m: u32, k: u32, n: u32 },
    #[error("event simulation limited to dimensions <= {EVENT_SIM_LIMIT}, got {m}x{k}x{n}")]
    OracleScale { m: u32, k: u32, n: u32 },
    #[error("operands do not match GEMM {0}")]
    OperandShape(String),
    #[error(transparent)]
    Mx(#[from] MxError),
    #[error(transparent)]
    Dpe(#[from] DpeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub r_tsa: u32,
    pub r_bsa: u32,
}

impl PartitionConfig {
    pub const fn total_rows(&self) -> u32 {
        ARRAY_ROWS
    }

    pub const fn cols(&self) -> u32 {
        ARRAY_COLS
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        if self.r_tsa == 0 || self.r_bsa == 0 || self.r_tsa + self.r_bsa != ARRAY_ROWS {
            return Err(FabricError::InvalidPartition { r_tsa: self.r_tsa, r_bsa: self.r_bsa });
        }
        Ok(())
    }

    pub fn rows_of(&self, sa: SubAccelerator) -> u32 {
        match sa {
            SubAccelerator::Tsa => self.r_tsa,
            SubAccelerator::Bsa => self.r_bsa,
        }
    }
}

pub fn configure_partition(r_tsa: u32) -> Result<PartitionConfig, FabricError> {
    if !(1..ARRAY_ROWS).contains(&r_tsa) {
        return Err(FabricError::PartitionRange(r_tsa));
    }
    Ok(PartitionConfig { r_tsa, r_bsa: ARRAY_ROWS - r_tsa })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubAccelerator {
    Tsa,
    Bsa,
}

/// Output is `m x n`, reduction depth `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u32,
    pub k: u32,
    pub n: u32,
}

impl GemmShape {
    pub fn new(m: u32, k: u32, n: u32) -> Result<Self, FabricError> {
        if m == 0 || k == 0 || n == 0 {
            return Err(FabricError::EmptyGemm { m, k, n });
        }
        Ok(Self { m, k, n })
    }

    /// The same product computed as `C^T = B^T A^T`.
    pub fn transposed(&self) -> Self {
        Self { m: self.n, k: self.k, n: self.m }
    }

    pub fn reduction_steps(&self) -> u64 {
        u64::from(self.k.div_ceil(BLOCK_SIZE as u32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub total_cycles: u64,
    pub fill_cycles: u64,
    pub compute_cycles: u64,
    pub drain_cycles: u64,
    pub sub_accelerator: Option<SubAccelerator>,
}

impl CycleReport {
    fn from_parts(fill: u64, compute: u64, drain: u64) -> Self {
        Self {
            total_cycles: fill + compute + drain,
            fill_cycles: fill,
            compute_cycles: compute,
            drain_cycles: drain,
            sub_accelerator: None,
        }
    }

    pub fn on(mut self, sa: SubAccelerator) -> Self {
        self.sub_accelerator = Some(sa);
        self
    }
}

/// Tunable constants of the closed-form model. The default is the frozen
/// calibration; `fill_offset` exists so validation can be shown to catch a
/// perturbed model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleModel {
    pub fill_offset: i64,
}

impl CycleModel {
    pub fn gemm_cycles(&self, shape: GemmShape, sa_rows: u32, sa_cols: u32, precision: MxPrecision) -> CycleReport {
        assert!(sa_rows >= 1 && sa_cols >= 1, "sub-array dimensions must be positive");
        let (m, n) = (u64::from(shape.m), u64::from(shape.n));
        let row_tiles = m.div_ceil(u64::from(sa_rows));
        let col_tiles = n.div_ceil(u64::from(sa_cols));
        let tiles = row_tiles * col_tiles;
        let compute = tiles * shape.reduction_steps() * u64::from(precision.dpe_cycles());
        // summing (r + c - 2) over tiles: every row-tile pairs with every
        // column-tile, and active rows (cols) sum to m (n)
        let fill = col_tiles * m + row_tiles * n - 2 * tiles;
        let fill = (fill as i64 + self.fill_offset * tiles as i64).max(0) as u64;
        let drain = col_tiles * m;
        CycleReport::from_parts(fill, compute, drain)
    }
}

pub fn gemm_cycles(shape: GemmShape, sa_rows: u32, sa_cols: u32, precision: MxPrecision) -> CycleReport {
    CycleModel::default().gemm_cycles(shape, sa_rows, sa_cols, precision)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TileEvent {
    /// Operand block `step` reaches DPE (row, col) from the west.
    ArriveWest { row: u32, col: u32, step: u32 },
    /// Operand block `step` reaches DPE (row, col) from the north.
    ArriveNorth { row: u32, col: u32, step: u32 },
    MacDone { row: u32, col: u32, step: u32 },
    /// One result leaves the bottom of column `col`.
    Shift { col: u32 },
}

#[derive(Debug, Clone, Default)]
struct DpeState {
    west: u32,
    north: u32,
    next_step: u32,
    busy: bool,
    first_start: Option<u64>,
}

/// Simulate one `rows x cols` output tile; returns (fill, compute, drain).
fn simulate_tile(rows: u32, cols: u32, steps: u32, dpe_cycles: u32) -> (u64, u64, u64) {
    let mut dpes = vec![DpeState::default(); (rows * cols) as usize];
    let idx = |r: u32, c: u32| (r * cols + c) as usize;
    let mut queue: BinaryHeap<Reverse<(u64, TileEvent)>> = BinaryHeap::new();

    // edge injection: one block per port per cycle, skewed by row / column
    for r in 0..rows {
        for s in 0..steps {
            queue.push(Reverse((u64::from(r + s), TileEvent::ArriveWest { row: r, col: 0, step: s })));
        }
    }
    for c in 0..cols {
        for s in 0..steps {
            queue.push(Reverse((u64::from(c + s), TileEvent::ArriveNorth { row: 0, col: c, step: s })));
        }
    }

    let mut remaining = rows * cols;
    let mut compute_done = 0u64;
    let mut drain_left = vec![rows; cols as usize];
    let mut tile_done = 0u64;

    while let Some(Reverse((t, ev))) = queue.pop() {
        let touched = match ev {
            TileEvent::ArriveWest { row, col, .. } => {
                dpes[idx(row, col)].west += 1;
                Some((row, col))
            }
            TileEvent::ArriveNorth { row, col, .. } => {
                dpes[idx(row, col)].north += 1;
                Some((row, col))
            }
            TileEvent::MacDone { row, col, step } => {
                let d = &mut dpes[idx(row, col)];
                d.busy = false;
                if step + 1 == steps {
                    remaining -= 1;
                    compute_done = compute_done.max(t);
                    if remaining == 0 {
                        // the whole tile's outputs drain once every DPE is done
                        for c in 0..cols {
                            queue.push(Reverse((t, TileEvent::Shift { col: c })));
                        }
                    }
                }
                Some((row, col))
            }
            TileEvent::Shift { col } => {
                drain_left[col as usize] -= 1;
                tile_done = tile_done.max(t + 1);
                if drain_left[col as usize] > 0 {
                    queue.push(Reverse((t + 1, TileEvent::Shift { col })));
                }
                None
            }
        };
        if let Some((row, col)) = touched {
            let d = &mut dpes[idx(row, col)];
            let s = d.next_step;
            if !d.busy && s < steps && d.west > s && d.north > s {
                d.busy = true;
                d.next_step += 1;
                d.first_start.get_or_insert(t);
                queue.push(Reverse((t + u64::from(dpe_cycles), TileEvent::MacDone { row, col, step: s })));
                // operands move on one cycle after being latched
                if col + 1 < cols {
                    queue.push(Reverse((t + 1, TileEvent::ArriveWest { row, col: col + 1, step: s })));
                }
                if row + 1 < rows {
                    queue.push(Reverse((t + 1, TileEvent::ArriveNorth { row: row + 1, col, step: s })));
                }
            }
        }
    }

    let fill = dpes.iter().filter_map(|d| d.first_start).max().unwrap_or(0);
    (fill, compute_done - fill, tile_done - compute_done)
}

/// Event-driven replay of the output-stationary schedule, tile by tile.
pub fn event_sim_gemm(shape: GemmShape, sa_rows: u32, sa_cols: u32, precision: MxPrecision) -> Result<CycleReport, FabricError> {
    let GemmShape { m, k, n } = shape;
    if m == 0 || k == 0 || n == 0 {
        return Err(FabricError::EmptyGemm { m, k, n });
    }
    if m > EVENT_SIM_LIMIT || k > EVENT_SIM_LIMIT || n > EVENT_SIM_LIMIT {
        return Err(FabricError::OracleScale { m, k, n });
    }
    assert!(sa_rows >= 1 && sa_cols >= 1, "sub-array dimensions must be positive");
    let steps = k.div_ceil(BLOCK_SIZE as u32);
    // tiles of equal active size replay identically
    let mut memo: HashMap<(u32, u32), (u64, u64, u64)> = HashMap::new();
    let (mut fill, mut compute, mut drain) = (0u64, 0u64, 0u64);
    let mut row0 = 0;
    while row0 < m {
        let rows = sa_rows.min(m - row0);
        let mut col0 = 0;
        while col0 < n {
            let cols = sa_cols.min(n - col0);
            let (f, c, d) = *memo
                .entry((rows, cols))
                .or_insert_with(|| simulate_tile(rows, cols, steps, precision.dpe_cycles()));
            fill += f;
            compute += c;
            drain += d;
            col0 += cols;
        }
        row0 += rows;
    }
    Ok(CycleReport::from_parts(fill, compute, drain))
}

/// Bytes of MX-encoded operands for one `rows x cols` tile over depth `k`.
pub fn tile_operand_bytes(rows: u32, cols: u32, k: u32, precision: MxPrecision) -> u64 {
    let blocks = u64::from(rows + cols) * u64::from(k.div_ceil(BLOCK_SIZE as u32));
    // shared exponent + micro byte, then sign-magnitude mantissas
    let bits_per_block = 16 + BLOCK_SIZE as u64 * u64::from(precision.mantissa_bits() + 1);
    blocks * bits_per_block.div_ceil(8)
}

/// Whether a full tile of this GEMM fits in the on-chip SRAM.
pub fn tile_fits_sram(shape: GemmShape, sa_rows: u32, sa_cols: u32, precision: MxPrecision) -> bool {
    let rows = sa_rows.min(shape.m);
    let cols = sa_cols.min(shape.n);
    let outputs = u64::from(rows) * u64::from(cols) * 4;
    tile_operand_bytes(rows, cols, shape.k, precision) + outputs <= SRAM_BYTES
}

/// Operand layout the memory interface feeds to each sub-accelerator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLayout {
    /// Array rows owned by the T-SA, fed from the top buffers.
    pub tsa_rows: std::ops::Range<u32>,
    /// Array rows owned by the B-SA, fed from the bottom buffers.
    pub bsa_rows: std::ops::Range<u32>,
}

impl MemoryLayout {
    fn for_partition(p: PartitionConfig) -> Self {
        Self { tsa_rows: 0..p.r_tsa, bsa_rows: p.r_tsa..ARRAY_ROWS }
    }
}

/// Operands of a GEMM `C = A B`: `lhs` is `A` (m x k) blocked by rows,
/// `rhs` is `B` (k x n) blocked by columns, so both reduce along k.
#[derive(Debug, Clone, PartialEq)]
pub struct GemmOperands {
    pub lhs: MxTensor,
    pub rhs: MxTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemmJob {
    pub shape: GemmShape,
    pub precision: MxPrecision,
    pub operands: Option<GemmOperands>,
}

impl GemmJob {
    pub fn timing_only(shape: GemmShape, precision: MxPrecision) -> Self {
        Self { shape, precision, operands: None }
    }

    pub fn with_operands(a: &Matrix, b: &Matrix, precision: MxPrecision) -> Result<Self, FabricError> {
        if a.cols() != b.rows() {
            return Err(FabricError::OperandShape(format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols())));
        }
        let shape = GemmShape::new(a.rows() as u32, a.cols() as u32, b.cols() as u32)?;
        let lhs = quantize_tensor(a, precision, BlockingMajor::RowMajor)?;
        let rhs = quantize_tensor(b, precision, BlockingMajor::ColMajor)?;
        Ok(Self { shape, precision, operands: Some(GemmOperands { lhs, rhs }) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub report: CycleReport,
    pub output: Option<Matrix>,
}

/// Functional GEMM: every output element is one DPE's chain of block dot
/// products, summed in FP32 in address order.
pub fn execute_gemm(shape: GemmShape, precision: MxPrecision, ops: &GemmOperands) -> Result<Matrix, FabricError> {
    let ok = ops.lhs.major() == BlockingMajor::RowMajor
        && ops.rhs.major() == BlockingMajor::ColMajor
        && ops.lhs.rows() == shape.m as usize
        && ops.lhs.cols() == shape.k as usize
        && ops.rhs.rows() == shape.k as usize
        && ops.rhs.cols() == shape.n as usize;
    if !ok {
        return Err(FabricError::OperandShape(format!("{shape:?}")));
    }
    let mode = DpeMode::for_precision(precision);
    let mut out = Matrix::zeros(shape.m as usize, shape.n as usize);
    for i in 0..shape.m as usize {
        let a = ops.lhs.lane(i);
        for j in 0..shape.n as usize {
            let mut acc = 0.0f32;
            for (x, y) in a.iter().zip(ops.rhs.lane(j)) {
                acc += dpe_execute(x, y, mode)?.value;
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// The array plus the partition state the memory interface is programmed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Fabric {
    partition: PartitionConfig,
    layout: MemoryLayout,
}

impl Fabric {
    pub fn new(partition: PartitionConfig) -> Result<Self, FabricError> {
        partition.validate()?;
        Ok(Self { partition, layout: MemoryLayout::for_partition(partition) })
    }

    /// Repartition and reprogram the memory interface.
    pub fn configure(&mut self, r_tsa: u32) -> Result<PartitionConfig, FabricError> {
        let p = configure_partition(r_tsa)?;
        self.partition = p;
        self.layout = MemoryLayout::for_partition(p);
        Ok(p)
    }

    pub fn partition(&self) -> PartitionConfig {
        self.partition
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    fn run_on(&self, sa: SubAccelerator, job: &GemmJob) -> Result<JobOutcome, FabricError> {
        let rows = self.layout_rows(sa);
        let report = gemm_cycles(job.shape, rows, ARRAY_COLS, job.precision).on(sa);
        let output = match &job.operands {
            Some(ops) => Some(execute_gemm(job.shape, job.precision, ops)?),
            None => None,
        };
        Ok(JobOutcome { report, output })
    }

    fn layout_rows(&self, sa: SubAccelerator) -> u32 {
        let range = match sa {
            SubAccelerator::Tsa => &self.layout.tsa_rows,
            SubAccelerator::Bsa => &self.layout.bsa_rows,
        };
        range.end - range.start
    }

    /// Run both job lists side by side; each sub-array only ever sees its
    /// own rows, so every outcome equals a solo run on an `r x 16` array.
    pub fn run_concurrent(&self, jobs_tsa: &[GemmJob], jobs_bsa: &[GemmJob]) -> Result<(Vec<JobOutcome>, Vec<JobOutcome>), FabricError> {
        let top = jobs_tsa.iter().map(|j| self.run_on(SubAccelerator::Tsa, j)).collect::<Result<_, _>>()?;
        let bottom = jobs_bsa.iter().map(|j| self.run_on(SubAccelerator::Bsa, j)).collect::<Result<_, _>>()?;
        Ok((top, bottom))
    }
}

pub fn run_concurrent(
    jobs_tsa: &[GemmJob],
    jobs_bsa: &[GemmJob],
    partition: PartitionConfig,
) -> Result<(Vec<JobOutcome>, Vec<JobOutcome>), FabricError> {
    Fabric::new(partition)?.run_concurrent(jobs_tsa, jobs_bsa)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvertedOutput {
    Inference(MxTensor),
    Training { row_major: MxTensor, col_major: MxTensor },
}

impl ConvertedOutput {
    pub fn row_major(&self) -> &MxTensor {
        match self {
            ConvertedOutput::Inference(t) => t,
            ConvertedOutput::Training { row_major, .. } => row_major,
        }
    }

    pub fn col_major(&self) -> Option<&MxTensor> {
        match self {
            ConvertedOutput::Inference(_) => None,
            ConvertedOutput::Training { col_major, .. } => Some(col_major),
        }
    }
}

/// Precision-conversion unit: re-block FP32 outputs into MX. Retraining
/// additionally needs the column-major blocking for transposed operands.
pub fn convert_outputs(out: &Matrix, precision: MxPrecision, for_training: bool) -> Result<ConvertedOutput, MxError> {
    let row_major = quantize_tensor(out, precision, BlockingMajor::RowMajor)?;
    if !for_training {
        return Ok(ConvertedOutput::Inference(row_major));
    }
    let col_major = quantize_tensor(out, precision, BlockingMajor::ColMajor)?;
    Ok(ConvertedOutput::Training { row_major, col_major })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mx::decode_block;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(m: u32, k: u32, n: u32) -> GemmShape {
        GemmShape::new(m, k, n).unwrap()
    }

    #[test]
    fn partition_bounds() {
        assert_eq!(configure_partition(8).unwrap(), PartitionConfig { r_tsa: 8, r_bsa: 8 });
        assert_eq!(configure_partition(1).unwrap(), PartitionConfig { r_tsa: 1, r_bsa: 15 });
        assert_eq!(configure_partition(0), Err(FabricError::PartitionRange(0)));
        assert_eq!(configure_partition(16), Err(FabricError::PartitionRange(16)));
        for r in 1..16 {
            let p = configure_partition(r).unwrap();
            assert_eq!(p.r_tsa + p.r_bsa, 16);
        }
    }

    #[test]
    fn configure_reprograms_layout() {
        let mut f = Fabric::new(configure_partition(8).unwrap()).unwrap();
        f.configure(5).unwrap();
        assert_eq!(f.layout().tsa_rows, 0..5);
        assert_eq!(f.layout().bsa_rows, 5..16);
        assert!(f.configure(0).is_err());
        assert_eq!(f.partition().r_tsa, 5);
    }

    #[test]
    fn single_dpe_single_block() {
        let r = gemm_cycles(shape(1, 16, 1), 1, 1, MxPrecision::Mx4);
        assert_eq!((r.fill_cycles, r.compute_cycles, r.drain_cycles, r.total_cycles), (0, 1, 1, 2));
        assert_eq!(event_sim_gemm(shape(1, 16, 1), 1, 1, MxPrecision::Mx4).unwrap(), r);
    }

    #[test]
    fn full_array_mx9_tile() {
        let r = gemm_cycles(shape(16, 16, 16), 16, 16, MxPrecision::Mx9);
        assert_eq!((r.fill_cycles, r.compute_cycles, r.drain_cycles), (30, 16, 16));
        assert_eq!(event_sim_gemm(shape(16, 16, 16), 16, 16, MxPrecision::Mx9).unwrap(), r);
    }

    #[test]
    fn two_by_two_mx6() {
        let r = event_sim_gemm(shape(2, 32, 2), 2, 2, MxPrecision::Mx6).unwrap();
        assert_eq!(r.compute_cycles, 8);
        assert_eq!(r, gemm_cycles(shape(2, 32, 2), 2, 2, MxPrecision::Mx6));
    }

    #[test]
    fn one_by_one_array_has_no_skew() {
        for p in MxPrecision::ALL {
            for (m, k, n) in [(3, 40, 5), (7, 1, 2), (1, 64, 9)] {
                let r = event_sim_gemm(shape(m, k, n), 1, 1, p).unwrap();
                let steps = u64::from(k.div_ceil(16));
                let mn = u64::from(m * n);
                assert_eq!(r.fill_cycles, 0);
                assert_eq!(r.total_cycles, steps * u64::from(p.dpe_cycles()) * mn + mn);
            }
        }
    }

    #[test]
    fn doubling_k_doubles_compute_only() {
        for p in MxPrecision::ALL {
            let a = gemm_cycles(shape(20, 48, 33), 8, 16, p);
            let b = gemm_cycles(shape(20, 96, 33), 8, 16, p);
            assert_eq!(b.compute_cycles, 2 * a.compute_cycles);
            assert_eq!((a.fill_cycles, a.drain_cycles), (b.fill_cycles, b.drain_cycles));
        }
    }

    #[test]
    fn event_sim_rejects_oracle_overflow() {
        assert!(matches!(
            event_sim_gemm(GemmShape { m: 257, k: 1, n: 1 }, 4, 4, MxPrecision::Mx4),
            Err(FabricError::OracleScale { .. })
        ));
        assert!(matches!(GemmShape::new(0, 1, 1), Err(FabricError::EmptyGemm { .. })));
    }

    #[test]
    fn analytic_matches_event_sim_on_small_grid() {
        let dims = [(1, 1), (2, 2), (4, 4), (8, 16), (16, 16), (3, 5)];
        for &(r, c) in &dims {
            for p in MxPrecision::ALL {
                for m in [1, 2, 5, 17, 33] {
                    for k in [1, 16, 17, 40] {
                        for n in [1, 3, 16, 19] {
                            let s = shape(m, k, n);
                            assert_eq!(gemm_cycles(s, r, c, p), event_sim_gemm(s, r, c, p).unwrap(), "{s:?} on {r}x{c} {p}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn perturbed_model_disagrees_with_event_sim() {
        let perturbed = CycleModel { fill_offset: 1 };
        let s = shape(4, 16, 4);
        assert_ne!(perturbed.gemm_cycles(s, 2, 2, MxPrecision::Mx6), event_sim_gemm(s, 2, 2, MxPrecision::Mx6).unwrap());
    }

    #[test]
    fn concurrent_jobs_do_not_interfere() {
        let p = configure_partition(8).unwrap();
        let job = GemmJob::timing_only(shape(40, 64, 24), MxPrecision::Mx6);
        let (top, bottom) = run_concurrent(&[job.clone()], &[job.clone()], p).unwrap();
        let solo = gemm_cycles(job.shape, 8, 16, job.precision);
        assert_eq!(top[0].report, solo.on(SubAccelerator::Tsa));
        assert_eq!(bottom[0].report, solo.on(SubAccelerator::Bsa));

        let (none, alone) = run_concurrent(&[], &[job.clone()], p).unwrap();
        assert!(none.is_empty());
        assert_eq!(alone, bottom);
    }

    #[test]
    fn functional_gemm_matches_decoded_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Matrix::from_fn(5, 20, |_, _| rng.random_range(-2.0f32..2.0));
        let b = Matrix::from_fn(20, 3, |_, _| rng.random_range(-2.0f32..2.0));
        let job = GemmJob::with_operands(&a, &b, MxPrecision::Mx9).unwrap();
        let ops = job.operands.as_ref().unwrap();
        let out = execute_gemm(job.shape, job.precision, ops).unwrap();
        let (da, db) = (ops.lhs.decode(), ops.rhs.decode());
        for i in 0..5 {
            for j in 0..3 {
                let expect: f64 = (0..20).map(|t| f64::from(da.get(i, t)) * f64::from(db.get(t, j))).sum();
                assert!((f64::from(out.get(i, j)) - expect).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn identity_converts_symmetrically() {
        let id = Matrix::identity(16);
        let conv = convert_outputs(&id, MxPrecision::Mx9, true).unwrap();
        assert_eq!(conv.col_major().unwrap().decode(), conv.row_major().decode());
        assert_eq!(conv.row_major().decode(), id);
    }

    #[test]
    fn inference_conversion_is_row_major_only() {
        let ones = Matrix::from_vec(1, 16, vec![1.0; 16]);
        let conv = convert_outputs(&ones, MxPrecision::Mx6, false).unwrap();
        assert!(conv.col_major().is_none());
        let t = conv.row_major();
        assert_eq!(t.blocks().len(), 1);
        assert_eq!(decode_block(&t.blocks()[0]), [1.0; 16]);
    }

    #[test]
    fn col_major_conversion_decodes_to_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Matrix::from_fn(20, 20, |_, _| rng.random_range(-3.0f32..3.0));
        let conv = convert_outputs(&m, MxPrecision::Mx9, true).unwrap();
        let col = conv.col_major().unwrap();
        // column-major blocking of M is row-major blocking of M^T
        let oracle = quantize_tensor(&m.transpose(), MxPrecision::Mx9, BlockingMajor::RowMajor).unwrap().decode();
        assert_eq!(col.decode().transpose(), oracle);
        assert!(convert_outputs(&Matrix::from_vec(1, 1, vec![f32::NAN]), MxPrecision::Mx9, true).is_err());
    }

    #[test]
    fn sram_legality() {
        assert!(tile_fits_sram(shape(16, 64, 16), 16, 16, MxPrecision::Mx9));
        assert!(!tile_fits_sram(shape(16, 1 << 20, 16), 16, 16, MxPrecision::Mx9));
    }

    fn dims() -> impl Strategy<Value = (u32, u32)> {
        prop_oneof![Just((1, 1)), Just((2, 2)), Just((4, 4)), Just((8, 16)), Just((16, 16))]
    }

    fn precision() -> impl Strategy<Value = MxPrecision> {
        prop_oneof![Just(MxPrecision::Mx4), Just(MxPrecision::Mx6), Just(MxPrecision::Mx9)]
    }

    proptest! {
        #[test]
        fn gemm_cycles_is_monotone(
            m in 1u32..200, k in 1u32..200, n in 1u32..200, r in 1u32..16, c in 1u32..16, p in precision()
        ) {
            let base = gemm_cycles(shape(m, k, n), r, c, p).total_cycles;
            prop_assert!(gemm_cycles(shape(m + 1, k, n), r, c, p).total_cycles >= base);
            prop_assert!(gemm_cycles(shape(m, k + 1, n), r, c, p).total_cycles >= base);
            prop_assert!(gemm_cycles(shape(m, k, n + 1), r, c, p).total_cycles >= base);
            prop_assert!(gemm_cycles(shape(m, k, n), r + 1, c, p).total_cycles <= base);
            prop_assert!(gemm_cycles(shape(m, k, n), r, c + 1, p).total_cycles <= base);
        }

        #[test]
        fn analytic_equals_event_sim(m in 1u32..=64, k in 1u32..=64, n in 1u32..=64, (r, c) in dims(), p in precision()) {
            let s = shape(m, k, n);
            prop_assert_eq!(gemm_cycles(s, r, c, p), event_sim_gemm(s, r, c, p).unwrap());
        }
    }
}
