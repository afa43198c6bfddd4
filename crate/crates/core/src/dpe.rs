//! Dot-Product Engine model.
//!
//! A DPE owns sixteen 2-bit multipliers. In MX4 mode each multiplier works on
//! its own element pair, so the whole 16-element dot product finishes in one
//! cycle. In MX6 mode groups of four multipliers fuse into a 4-bit multiply
//! (4 products per cycle, 4 cycles); in MX9 all sixteen fuse into one 8-bit
//! multiply (1 product per cycle, 16 cycles). Fused partial products are
//! reduced by the MAC tree and the relevant tree level forwards its result to
//! the FP32 generator, which accumulates across cycles and normalizes once.

use thiserror::Error;

use crate::mx::{MxBlock, MxPrecision, EXPONENT_BIAS, SUB_BLOCK_SIZE};

pub const MULTIPLIERS: usize = 16;
pub const LIMB_BITS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DpeError {
    #[error("operand has {0} limbs, expected 1, 2 or 4")]
    LimbCount(usize),
    #[error("limb value {0} does not fit in 2 bits")]
    LimbValue(u8),
    #[error("operand precision {operand} does not match DPE mode {mode}")]
    PrecisionMismatch { operand: MxPrecision, mode: MxPrecision },
}

/// MAC-tree level whose output is forwarded to the FP32 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardTap {
    /// Raw 2-bit multiplier outputs.
    Multiplier,
    /// Level-1 adders: fused 4-bit products.
    Fused4,
    /// Level-2 adders: fused 8-bit products.
    Fused8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpeMode {
    pub precision: MxPrecision,
    /// Element products formed per cycle.
    pub parallel_mults: usize,
    pub serial_steps: u32,
    /// 2-bit limbs per operand mantissa.
    pub limbs: usize,
    pub tap: ForwardTap,
}

impl DpeMode {
    pub const fn for_precision(precision: MxPrecision) -> Self {
        match precision {
            MxPrecision::Mx4 => DpeMode {
                precision,
                parallel_mults: 16,
                serial_steps: 1,
                limbs: 1,
                tap: ForwardTap::Multiplier,
            },
            MxPrecision::Mx6 => DpeMode {
                precision,
                parallel_mults: 4,
                serial_steps: 4,
                limbs: 2,
                tap: ForwardTap::Fused4,
            },
            // 7-bit mantissas ride in an 8-bit (4-limb) multiply
            MxPrecision::Mx9 => DpeMode {
                precision,
                parallel_mults: 1,
                serial_steps: 16,
                limbs: 4,
                tap: ForwardTap::Fused8,
            },
        }
    }

    /// 2-bit multipliers busy per cycle.
    pub const fn active_multipliers(&self) -> usize {
        self.parallel_mults * self.limbs * self.limbs
    }

    /// Element products covered by one full dot product.
    pub const fn products_per_dot(&self) -> usize {
        self.parallel_mults * self.serial_steps as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpeResult {
    pub value: f32,
    pub cycles: u32,
}

/// Per-cycle record of what the MAC tree forwarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleTrace {
    pub cycle: u32,
    /// Element indices multiplied this cycle.
    pub elements: Vec<usize>,
    /// Signed, microexponent-aligned sum forwarded this cycle.
    pub forwarded: i64,
}

/// Split a magnitude into `count` 2-bit limbs, least significant first.
pub fn to_limbs(value: u8, count: usize) -> Vec<u8> {
    (0..count).map(|i| (value >> (2 * i)) & 0b11).collect()
}

/// Multiply two limb-decomposed magnitudes the way the fused datapath does:
/// every limb pair goes to one 2-bit multiplier and the partial products are
/// shift-weighted and summed by the adder tree.
pub fn compose_multiply(a_limbs: &[u8], b_limbs: &[u8]) -> Result<u32, DpeError> {
    for limbs in [a_limbs, b_limbs] {
        if !matches!(limbs.len(), 1 | 2 | 4) {
            return Err(DpeError::LimbCount(limbs.len()));
        }
        if let Some(&bad) = limbs.iter().find(|&&l| l > 0b11) {
            return Err(DpeError::LimbValue(bad));
        }
    }
    let mut sum = 0u32;
    for (i, &a) in a_limbs.iter().enumerate() {
        for (j, &b) in b_limbs.iter().enumerate() {
            let partial = u32::from(a) * u32::from(b);
            sum += partial << (LIMB_BITS as usize * (i + j));
        }
    }
    Ok(sum)
}

pub fn dpe_execute(x: &MxBlock, y: &MxBlock, mode: DpeMode) -> Result<DpeResult, DpeError> {
    execute(x, y, mode, None)
}

/// Like [`dpe_execute`], also returning what was forwarded on each cycle.
pub fn dpe_execute_traced(x: &MxBlock, y: &MxBlock, mode: DpeMode) -> Result<(DpeResult, Vec<CycleTrace>), DpeError> {
    let mut trace = Vec::with_capacity(mode.serial_steps as usize);
    let result = execute(x, y, mode, Some(&mut trace))?;
    Ok((result, trace))
}

fn execute(x: &MxBlock, y: &MxBlock, mode: DpeMode, mut trace: Option<&mut Vec<CycleTrace>>) -> Result<DpeResult, DpeError> {
    for operand in [x.precision, y.precision] {
        if operand != mode.precision {
            return Err(DpeError::PrecisionMismatch { operand, mode: mode.precision });
        }
    }
    let mut accumulator: i64 = 0;
    for step in 0..mode.serial_steps {
        // address order within the block
        let lanes = step as usize * mode.parallel_mults..(step as usize + 1) * mode.parallel_mults;
        let mut forwarded: i64 = 0;
        for j in lanes.clone() {
            let magnitude = compose_multiply(&to_limbs(x.mantissas[j], mode.limbs), &to_limbs(y.mantissas[j], mode.limbs))?;
            let sub = j / SUB_BLOCK_SIZE;
            let shift = 2 - x.micro_exponent(sub) - y.micro_exponent(sub);
            let aligned = i64::from(magnitude) << shift;
            // signs are XORed outside the unsigned limb datapath
            forwarded += if x.is_negative(j) ^ y.is_negative(j) { -aligned } else { aligned };
        }
        accumulator += forwarded;
        if let Some(t) = trace.as_deref_mut() {
            t.push(CycleTrace { cycle: step, elements: lanes.collect(), forwarded });
        }
    }
    let m = mode.precision.mantissa_bits() as i32;
    let scale = i32::from(x.shared_exponent) + i32::from(y.shared_exponent) - 2 * EXPONENT_BIAS - 2 * (m - 1) - 2;
    Ok(DpeResult { value: fp32_generate(accumulator, scale), cycles: mode.serial_steps })
}

/// Shift right by `shift` with round-to-nearest-even; negative shifts move left.
fn round_shift(magnitude: u64, shift: i32) -> u64 {
    if shift <= 0 {
        return magnitude << (-shift);
    }
    if shift > 64 {
        return 0;
    }
    let wide = u128::from(magnitude);
    let q = wide >> shift;
    let rem = wide & ((1u128 << shift) - 1);
    let half = 1u128 << (shift - 1);
    let rounded = if rem > half || (rem == half && q & 1 == 1) { q + 1 } else { q };
    rounded as u64
}

/// FP32 generator: normalize `acc * 2^scale` into an IEEE-754 single with a
/// single round-to-nearest-even, including subnormal and overflow results.
pub fn fp32_generate(acc: i64, scale: i32) -> f32 {
    if acc == 0 {
        return 0.0;
    }
    let sign = u32::from(acc < 0) << 31;
    let magnitude = acc.unsigned_abs();
    let msb = 63 - magnitude.leading_zeros() as i32;
    let biased = msb + scale + EXPONENT_BIAS;
    let bits = if biased >= 1 {
        let significand = round_shift(magnitude, msb - 23);
        let (significand, biased) = if significand == 1 << 24 { (1 << 23, biased + 1) } else { (significand, biased) };
        if biased >= 255 {
            0x7f80_0000
        } else {
            ((biased as u32) << 23) | (significand as u32 & 0x007f_ffff)
        }
    } else {
        // subnormal: value = fraction * 2^-149; a carry into bit 23 lands on
        // the smallest normal, which is the correct encoding
        round_shift(magnitude, -(scale + 149)) as u32
    };
    f32::from_bits(sign | bits)
}
