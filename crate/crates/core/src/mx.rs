//! MX block floating point: 16-element blocks sharing an 8-bit exponent,
//! with one microexponent bit per 2-element sub-block and sign-magnitude
//! mantissas truncated to 2, 4 or 7 bits.
//!
//! Element `j` of sub-block `i` decodes to
//! `(-1)^s * mantissa * 2^(shared - 127 - mu_i - (m - 1))`. Mantissas carry
//! their leading bit explicitly, so elements below the shared exponent simply
//! lose low-order bits. A set microexponent shifts the sub-block's scale down
//! by one, buying one extra bit for sub-blocks that sit entirely below the
//! block maximum.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, MxError};
use crate::tensor::{ByteCursor, Matrix};

pub const BLOCK_SIZE: usize = 16;
pub const SUB_BLOCK_SIZE: usize = 2;
pub const SUB_BLOCKS: usize = BLOCK_SIZE / SUB_BLOCK_SIZE;
pub const EXPONENT_BIAS: i32 = 127;

pub const TENSOR_MAGIC: &[u8; 4] = b"MXT1";
/// Serialized size of one block: exponent, micro bits, signs, 16 mantissas.
pub const SERIALIZED_BLOCK_BYTES: usize = 1 + 1 + 2 + BLOCK_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MxPrecision {
    Mx4,
    Mx6,
    Mx9,
}

impl MxPrecision {
    pub const ALL: [MxPrecision; 3] = [MxPrecision::Mx4, MxPrecision::Mx6, MxPrecision::Mx9];

    pub const fn mantissa_bits(self) -> u32 {
        match self {
            MxPrecision::Mx4 => 2,
            MxPrecision::Mx6 => 4,
            MxPrecision::Mx9 => 7,
        }
    }

    /// Cycles one DPE needs for a full 16-element dot product.
    pub const fn dpe_cycles(self) -> u32 {
        match self {
            MxPrecision::Mx4 => 1,
            MxPrecision::Mx6 => 4,
            MxPrecision::Mx9 => 16,
        }
    }

    /// Tag byte used in the `MXT1` header.
    pub const fn tag(self) -> u8 {
        match self {
            MxPrecision::Mx4 => 4,
            MxPrecision::Mx6 => 6,
            MxPrecision::Mx9 => 9,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            4 => Some(MxPrecision::Mx4),
            6 => Some(MxPrecision::Mx6),
            9 => Some(MxPrecision::Mx9),
            _ => None,
        }
    }
}

impl fmt::Display for MxPrecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MxPrecision::Mx4 => "mx4",
            MxPrecision::Mx6 => "mx6",
            MxPrecision::Mx9 => "mx9",
        };
        f.write_str(s)
    }
}

impl FromStr for MxPrecision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mx4" => Ok(MxPrecision::Mx4),
            "mx6" => Ok(MxPrecision::Mx6),
            "mx9" => Ok(MxPrecision::Mx9),
            other => Err(format!("unknown MX precision `{other}` (expected mx4, mx6 or mx9)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MxBlock {
    pub shared_exponent: u8,
    /// Bit `i` is the microexponent of sub-block `i` (elements `2i`, `2i+1`).
    pub micro_exponents: u8,
    /// Bit `j` is the sign of element `j`.
    pub signs: u16,
    pub mantissas: [u8; BLOCK_SIZE],
    pub precision: MxPrecision,
}

impl MxBlock {
    pub fn zero(precision: MxPrecision) -> Self {
        Self { shared_exponent: 0, micro_exponents: 0, signs: 0, mantissas: [0; BLOCK_SIZE], precision }
    }

    #[inline]
    pub fn micro_exponent(&self, sub_block: usize) -> u32 {
        u32::from((self.micro_exponents >> sub_block) & 1)
    }

    #[inline]
    pub fn is_negative(&self, element: usize) -> bool {
        (self.signs >> element) & 1 == 1
    }

    /// Power-of-two weight of one mantissa unit for element `j`.
    #[inline]
    pub fn unit_exponent(&self, element: usize) -> i32 {
        i32::from(self.shared_exponent)
            - EXPONENT_BIAS
            - self.micro_exponent(element / SUB_BLOCK_SIZE) as i32
            - (self.precision.mantissa_bits() as i32 - 1)
    }

    /// Structural validity: every mantissa fits in the precision's width.
    pub fn is_well_formed(&self) -> bool {
        let limit = 1u16 << self.precision.mantissa_bits();
        self.mantissas.iter().all(|&m| u16::from(m) < limit)
    }
}

/// `2^exp` for exponents inside the normal f64 range.
#[inline]
fn pow2(exp: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&exp));
    f64::from_bits(((exp + 1023) as u64) << 52)
}

#[inline]
fn biased_exponent(bits: u32) -> u32 {
    (bits >> 23) & 0xff
}

/// Encode 16 FP32 values into one MX block, truncating toward zero.
///
/// Subnormal inputs are flushed to (signed) zero before the exponent scan.
pub fn encode_block(values: &[f32; BLOCK_SIZE], precision: MxPrecision) -> Result<MxBlock, MxError> {
    let mut exponents = [0u32; BLOCK_SIZE];
    let mut significands = [0u32; BLOCK_SIZE];
    let mut signs = 0u16;
    let mut shared = 0u32;

    for (j, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(MxError::NonFinite { index: j, value: v });
        }
        let bits = v.to_bits();
        if bits >> 31 == 1 {
            signs |= 1 << j;
        }
        let e = biased_exponent(bits);
        if e != 0 {
            exponents[j] = e;
            significands[j] = (bits & 0x007f_ffff) | 0x0080_0000;
            shared = shared.max(e);
        }
    }

    let m = precision.mantissa_bits();
    let mut micro = 0u8;
    let mut mantissas = [0u8; BLOCK_SIZE];
    for i in 0..SUB_BLOCKS {
        let pair = &exponents[i * SUB_BLOCK_SIZE..(i + 1) * SUB_BLOCK_SIZE];
        // zero elements carry no exponent; an all-zero pair keeps mu = 0
        let any_nonzero = pair.iter().any(|&e| e != 0);
        let all_below = pair.iter().all(|&e| e < shared);
        let mu = u32::from(any_nonzero && all_below);
        micro |= (mu as u8) << i;

        let effective = shared - mu;
        for j in i * SUB_BLOCK_SIZE..(i + 1) * SUB_BLOCK_SIZE {
            if exponents[j] == 0 {
                continue;
            }
            // significand is 24 bits; keep the top m bits at the effective scale
            let shift = (24 - m) + (effective - exponents[j]);
            let mant = if shift >= 32 { 0 } else { significands[j] >> shift };
            debug_assert!(mant < (1 << m));
            mantissas[j] = mant as u8;
        }
    }

    Ok(MxBlock { shared_exponent: shared as u8, micro_exponents: micro, signs, mantissas, precision })
}

/// Exact `mantissa * 2^exp` as FP32. Values below the FP32 subnormal range
/// become zero; with an 8-bit shared exponent that cannot happen for a
/// 7-bit mantissa, but the guard keeps the contract explicit.
#[inline]
fn scaled(mantissa: u8, exp: i32, negative: bool) -> f32 {
    let magnitude = if mantissa == 0 || exp + 7 < -149 {
        0.0
    } else {
        (f64::from(mantissa) * pow2(exp)) as f32
    };
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

pub fn decode_block(block: &MxBlock) -> [f32; BLOCK_SIZE] {
    std::array::from_fn(|j| scaled(block.mantissas[j], block.unit_exponent(j), block.is_negative(j)))
}

/// Reference MX dot product: exact integer accumulation of the 16
/// mantissa products, aligned per sub-block pair, converted to FP32 once.
/// Every DPE execution must reproduce this bit for bit.
pub fn block_dot(x: &MxBlock, y: &MxBlock) -> Result<f32, MxError> {
    if x.precision != y.precision {
        return Err(MxError::PrecisionMismatch { left: x.precision, right: y.precision });
    }
    let m = x.precision.mantissa_bits() as i32;
    let negative = x.signs ^ y.signs;
    let mut acc: i64 = 0;
    for i in 0..SUB_BLOCKS {
        let mut pair: i64 = 0;
        for j in i * SUB_BLOCK_SIZE..(i + 1) * SUB_BLOCK_SIZE {
            let product = i64::from(x.mantissas[j]) * i64::from(y.mantissas[j]);
            pair += if (negative >> j) & 1 == 1 { -product } else { product };
        }
        // products are aligned to the finest possible scale (both mu = 1)
        acc += pair << (2 - x.micro_exponent(i) - y.micro_exponent(i));
    }
    let exp = i32::from(x.shared_exponent) + i32::from(y.shared_exponent)
        - 2 * EXPONENT_BIAS
        - 2 * (m - 1)
        - 2;
    // |acc| < 2^21, so acc * 2^exp is exact in f64 and the cast rounds once
    Ok((acc as f64 * pow2(exp)) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockingMajor {
    RowMajor,
    ColMajor,
}

impl BlockingMajor {
    pub fn tag(self) -> u8 {
        match self {
            BlockingMajor::RowMajor => 0,
            BlockingMajor::ColMajor => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(BlockingMajor::RowMajor),
            1 => Some(BlockingMajor::ColMajor),
            _ => None,
        }
    }
}

/// A matrix quantized into MX blocks along rows (`RowMajor`) or columns
/// (`ColMajor`). Each lane (a row, or a column) is cut into runs of 16
/// elements; the last run is zero padded.
#[derive(Debug, Clone, PartialEq)]
pub struct MxTensor {
    rows: usize,
    cols: usize,
    major: BlockingMajor,
    precision: MxPrecision,
    blocks: Vec<MxBlock>,
}

pub fn blocks_per_lane(len: usize) -> usize {
    len.div_ceil(BLOCK_SIZE)
}

impl MxTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn major(&self) -> BlockingMajor {
        self.major
    }

    pub fn precision(&self) -> MxPrecision {
        self.precision
    }

    pub fn blocks(&self) -> &[MxBlock] {
        &self.blocks
    }

    /// Number of lanes (rows for `RowMajor`, columns for `ColMajor`).
    pub fn lanes(&self) -> usize {
        match self.major {
            BlockingMajor::RowMajor => self.rows,
            BlockingMajor::ColMajor => self.cols,
        }
    }

    pub fn lane_len(&self) -> usize {
        match self.major {
            BlockingMajor::RowMajor => self.cols,
            BlockingMajor::ColMajor => self.rows,
        }
    }

    /// Blocks of one lane in address order.
    pub fn lane(&self, index: usize) -> &[MxBlock] {
        let per = blocks_per_lane(self.lane_len());
        &self.blocks[index * per..(index + 1) * per]
    }

    pub fn expected_block_count(rows: usize, cols: usize, major: BlockingMajor) -> usize {
        match major {
            BlockingMajor::RowMajor => rows * blocks_per_lane(cols),
            BlockingMajor::ColMajor => cols * blocks_per_lane(rows),
        }
    }

    /// Decode back to a dense matrix in the tensor's logical orientation.
    pub fn decode(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        let len = self.lane_len();
        for lane in 0..self.lanes() {
            for (b, block) in self.lane(lane).iter().enumerate() {
                let values = decode_block(block);
                for (j, &v) in values.iter().enumerate() {
                    let pos = b * BLOCK_SIZE + j;
                    if pos >= len {
                        break;
                    }
                    match self.major {
                        BlockingMajor::RowMajor => out.set(lane, pos, v),
                        BlockingMajor::ColMajor => out.set(pos, lane, v),
                    }
                }
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&[self.precision.tag()])?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        w.write_all(&[self.major.tag()])?;
        for b in &self.blocks {
            w.write_all(&[b.shared_exponent, b.micro_exponents])?;
            w.write_all(&b.signs.to_le_bytes())?;
            w.write_all(&b.mantissas)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<MxTensor, FormatError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        if cur.take(4, "magic")? != TENSOR_MAGIC {
            return Err(FormatError::BadMagic { expected: "MXT1" });
        }
        let tag = cur.u8("precision tag")?;
        let precision = MxPrecision::from_tag(tag)
            .ok_or_else(|| FormatError::Invalid(format!("unknown precision tag {tag}")))?;
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let major_tag = cur.u8("major")?;
        let major = BlockingMajor::from_tag(major_tag)
            .ok_or_else(|| FormatError::Invalid(format!("unknown blocking major {major_tag}")))?;
        let count = Self::expected_block_count(rows, cols, major);
        let mut blocks = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let shared_exponent = cur.u8("shared exponent")?;
            let micro_exponents = cur.u8("micro exponents")?;
            let signs = cur.u16("signs")?;
            let mantissas = cur.array::<BLOCK_SIZE>("mantissas")?;
            let block = MxBlock { shared_exponent, micro_exponents, signs, mantissas, precision };
            if !block.is_well_formed() {
                return Err(FormatError::Invalid(format!(
                    "mantissa wider than {} bits in block {}",
                    precision.mantissa_bits(),
                    blocks.len()
                )));
            }
            blocks.push(block);
        }
        cur.finish()?;
        Ok(MxTensor { rows, cols, major, precision, blocks })
    }
}

/// Quantize a matrix into MX blocks along the chosen major axis.
pub fn quantize_tensor(t: &Matrix, precision: MxPrecision, major: BlockingMajor) -> Result<MxTensor, MxError> {
    if let Some((row, col, value)) = t.first_non_finite() {
        return Err(MxError::NonFiniteAt { row, col, value });
    }
    let (lanes, len) = match major {
        BlockingMajor::RowMajor => (t.rows(), t.cols()),
        BlockingMajor::ColMajor => (t.cols(), t.rows()),
    };
    let per = blocks_per_lane(len);
    let mut blocks = Vec::with_capacity(lanes * per);
    for lane in 0..lanes {
        for b in 0..per {
            let values: [f32; BLOCK_SIZE] = std::array::from_fn(|j| {
                let pos = b * BLOCK_SIZE + j;
                if pos >= len {
                    0.0
                } else {
                    match major {
                        BlockingMajor::RowMajor => t.get(lane, pos),
                        BlockingMajor::ColMajor => t.get(pos, lane),
                    }
                }
            });
            blocks.push(encode_block(&values, precision)?);
        }
    }
    Ok(MxTensor { rows: t.rows(), cols: t.cols(), major, precision, blocks })
}

/// Quantize a single vector as a one-row tensor.
pub fn quantize_vector(v: &[f32], precision: MxPrecision) -> Result<Vec<MxBlock>, MxError> {
    let m = Matrix::from_vec(1, v.len(), v.to_vec());
    Ok(quantize_tensor(&m, precision, BlockingMajor::RowMajor)?.blocks)
}

/// Dot product of two equal-length lanes, summing per-block results in FP32.
pub fn lane_dot(x: &[MxBlock], y: &[MxBlock]) -> Result<f32, MxError> {
    if x.len() != y.len() {
        return Err(MxError::Shape(format!("lane lengths differ: {} vs {}", x.len(), y.len())));
    }
    let mut sum = 0.0f32;
    for (a, b) in x.iter().zip(y) {
        sum += block_dot(a, b)?;
    }
    Ok(sum)
}
