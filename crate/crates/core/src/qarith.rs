//! Fixed-point arithmetic shared bit-for-bit by the functional network and
//! the cycle simulator.
//!
//! Three signed formats are in play: 11-bit weights (Q2.8), 18-bit
//! activations (Q9.8) and 40-bit accumulators (Q23.16). Attention masks are
//! unsigned Q0.11 so they fit the same 11-bit multiplier port as weights.
//! Every rescale rounds half up (add half an ulp, then floor) and every
//! overflow saturates.

use core::fmt;

include!(concat!(env!("OUT_DIR"), "/sigmoid_lut.rs"));

/// Signed fixed-point format: one sign bit, `int_bits` integer bits and
/// `frac_bits` fraction bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    int_bits: u8,
    frac_bits: u8,
}

impl QFormat {
    /// 11-bit weight format, Q2.8.
    pub const WEIGHT: QFormat = QFormat::new(2, 8);
    /// 18-bit activation format, Q9.8.
    pub const ACTIVATION: QFormat = QFormat::new(9, 8);
    /// 40-bit accumulator format, Q23.16.
    pub const ACCUMULATOR: QFormat = QFormat::new(23, 16);

    pub const fn new(int_bits: u8, frac_bits: u8) -> Self {
        assert!(1 + int_bits as u32 + frac_bits as u32 <= 63);
        Self { int_bits, frac_bits }
    }

    pub const fn int_bits(self) -> u32 {
        self.int_bits as u32
    }

    pub const fn frac_bits(self) -> u32 {
        self.frac_bits as u32
    }

    /// Total width including the sign bit.
    pub const fn width(self) -> u32 {
        1 + self.int_bits as u32 + self.frac_bits as u32
    }

    pub const fn raw_min(self) -> i64 {
        -(1i64 << (self.width() - 1))
    }

    pub const fn raw_max(self) -> i64 {
        (1i64 << (self.width() - 1)) - 1
    }

    pub fn min_value(self) -> f64 {
        self.raw_min() as f64 / self.scale()
    }

    pub fn max_value(self) -> f64 {
        self.raw_max() as f64 / self.scale()
    }

    /// One ulp expressed as a real number.
    pub fn ulp(self) -> f64 {
        1.0 / self.scale()
    }

    fn scale(self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Clamps `raw` into the format. The flag is set when clamping happened.
    #[inline]
    pub const fn saturate(self, raw: i64) -> (i64, bool) {
        if raw > self.raw_max() {
            (self.raw_max(), true)
        } else if raw < self.raw_min() {
            (self.raw_min(), true)
        } else {
            (raw, false)
        }
    }

    pub const fn contains(self, raw: i64) -> bool {
        raw >= self.raw_min() && raw <= self.raw_max()
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.int_bits, self.frac_bits)
    }
}

/// A raw two's-complement integer tagged with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QValue {
    raw: i64,
    fmt: QFormat,
}

impl QValue {
    /// Builds a value, saturating `raw` into the format.
    pub fn from_raw(raw: i64, fmt: QFormat) -> Self {
        Self { raw: fmt.saturate(raw).0, fmt }
    }

    /// Builds a value only if `raw` fits.
    pub fn try_from_raw(raw: i64, fmt: QFormat) -> Option<Self> {
        fmt.contains(raw).then_some(Self { raw, fmt })
    }

    pub const fn raw(self) -> i64 {
        self.raw
    }

    pub const fn fmt(self) -> QFormat {
        self.fmt
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 / self.fmt.scale()
    }
}

/// Attention mask value: unsigned Q0.11, always strictly below 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MaskValue(u16);

impl MaskValue {
    pub const FRAC_BITS: u32 = 11;
    pub const RAW_MAX: u16 = (1 << Self::FRAC_BITS) - 1;
    /// Raw encoding of 0.5.
    pub const HALF: MaskValue = MaskValue(1 << (Self::FRAC_BITS - 1));

    pub fn from_raw(raw: u16) -> Option<Self> {
        (raw <= Self::RAW_MAX).then_some(Self(raw))
    }

    pub const fn raw(self) -> u16 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.0) / f64::from(1u32 << Self::FRAC_BITS)
    }
}

/// Counts silent saturation events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaturationCounter(u64);

impl SaturationCounter {
    pub const fn new() -> Self {
        Self(0)
    }

    #[inline]
    pub fn record(&mut self, saturated: bool) {
        self.0 += u64::from(saturated);
    }

    pub const fn count(self) -> u64 {
        self.0
    }
}

/// Quantizes a real number: round half up, then saturate.
pub fn quantize(x: f64, fmt: QFormat) -> QValue {
    quantize_counted(x, fmt, &mut SaturationCounter::new())
}

pub fn quantize_counted(x: f64, fmt: QFormat, sat: &mut SaturationCounter) -> QValue {
    if x.is_nan() {
        sat.record(true);
        return QValue { raw: 0, fmt };
    }
    let scaled = libm::floor(x * fmt.scale() + 0.5);
    let (raw, clipped) = if scaled >= fmt.raw_max() as f64 {
        (fmt.raw_max(), scaled > fmt.raw_max() as f64)
    } else if scaled <= fmt.raw_min() as f64 {
        (fmt.raw_min(), scaled < fmt.raw_min() as f64)
    } else {
        (scaled as i64, false)
    };
    sat.record(clipped);
    QValue { raw, fmt }
}

pub fn dequantize(q: QValue) -> f64 {
    q.to_f64()
}

/// The 11-bit operand on a PE multiplier port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplicand {
    Weight(QValue),
    Mask(MaskValue),
}

/// Exact PE product. The result carries `w.frac + a.frac` fraction bits and
/// fits in 29 bits, so it never needs rounding or saturation.
pub fn mul_wa(w: Multiplicand, a: QValue) -> QValue {
    let (w_raw, w_frac) = match w {
        Multiplicand::Weight(q) => (q.raw, q.fmt.frac_bits),
        Multiplicand::Mask(m) => (i64::from(m.0), MaskValue::FRAC_BITS as u8),
    };
    let frac = w_frac + a.fmt.frac_bits;
    QValue {
        raw: w_raw * a.raw,
        fmt: QFormat::new(28 - frac, frac),
    }
}

/// Arithmetic right shift by `shift` with round-half-up.
#[inline]
pub const fn round_shift(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        v
    } else {
        (v + (1i64 << (shift - 1))) >> shift
    }
}

/// Largest activation magnitude allowed out of any layer, in activation raw units.
pub const ACT_LIMIT_RAW: i32 = 255 << QFormat::ACTIVATION.frac_bits();

/// Clamps an accumulator raw value (with `frac` fraction bits) to ±255 and
/// requantizes it to the activation format.
#[inline]
pub const fn clamp255_raw(acc: i64, frac: u32) -> i32 {
    let limit = 255i64 << frac;
    if acc >= limit {
        ACT_LIMIT_RAW
    } else if acc <= -limit {
        -ACT_LIMIT_RAW
    } else {
        let act_frac = QFormat::ACTIVATION.frac_bits();
        let r = if frac >= act_frac {
            round_shift(acc, frac - act_frac)
        } else {
            acc << (act_frac - frac)
        };
        // rounding can land exactly on the limit but never past it
        r as i32
    }
}

/// Clamp of the activation function: ±255 bound, then activation format.
pub fn clamp255(x: QValue) -> QValue {
    QValue {
        raw: i64::from(clamp255_raw(x.raw, x.fmt.frac_bits())),
        fmt: QFormat::ACTIVATION,
    }
}

/// Saturates an integer sum into the 40-bit accumulator.
#[inline]
pub fn saturate_acc(acc: i64, sat: &mut SaturationCounter) -> i64 {
    let (v, s) = QFormat::ACCUMULATOR.saturate(acc);
    sat.record(s);
    v
}

/// Number of entries in the sigmoid lookup table.
pub const SIGMOID_LUT_LEN: usize = SIGMOID_LUT.len();

/// Raw table entry `i`, i.e. sigmoid(i / 512) in Q0.11.
pub fn sigmoid_lut_entry(i: usize) -> u16 {
    SIGMOID_LUT[i]
}

/// `sigmoid(x / 256)` for a raw activation.
///
/// Dividing by 256 is a shift of the binary point: the activation raw value
/// read with 16 fraction bits. The magnitude is rounded to the nearest
/// 1/512 step to select a table entry; negative inputs use `1 - entry`, so
/// `sigmoid_raw(x) + sigmoid_raw(-x)` is exactly 1.0.
#[inline]
pub fn sigmoid_raw(act: i32) -> u16 {
    let shift = QFormat::ACTIVATION.frac_bits() + 8 - 9;
    let mag = act.unsigned_abs();
    let idx = ((mag + (1 << (shift - 1))) >> shift).min(SIGMOID_LUT_LEN as u32 - 1) as usize;
    let v = SIGMOID_LUT[idx];
    if act < 0 {
        (1 << MaskValue::FRAC_BITS) - v
    } else {
        v
    }
}

pub fn sigmoid_d(x: QValue) -> MaskValue {
    debug_assert_eq!(x.fmt, QFormat::ACTIVATION);
    let act = x.raw.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32;
    MaskValue(sigmoid_raw(act))
}

/// Element-wise attention product, requantized to the activation format.
#[inline]
pub const fn attend_raw(act: i32, mask: u16) -> i32 {
    round_shift(act as i64 * mask as i64, MaskValue::FRAC_BITS) as i32
}

/// Activation raw value for an 8-bit pixel.
#[inline]
pub const fn pixel_to_act(p: u8) -> i32 {
    (p as i32) << QFormat::ACTIVATION.frac_bits()
}

/// Nearest 8-bit pixel for a raw activation (round half up, clip to 0..=255).
#[inline]
pub fn act_to_pixel(act: i32) -> u8 {
    round_shift(i64::from(act), QFormat::ACTIVATION.frac_bits()).clamp(0, 255) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + libm::exp(-x))
    }

    /// Round-half-up through exact rational arithmetic: floor((2n + d) / 2d)
    /// for x = n / d.
    fn rational_round_half_up(num: i64, den: i64, frac: u32) -> i64 {
        let n = num * (1 << frac);
        (2 * n + den).div_euclid(2 * den)
    }

    #[test]
    fn formats_have_declared_widths() {
        assert_eq!(QFormat::WEIGHT.width(), 11);
        assert_eq!(QFormat::ACTIVATION.width(), 18);
        assert_eq!(QFormat::ACCUMULATOR.width(), 40);
        assert_eq!(QFormat::WEIGHT.min_value(), -4.0);
        assert_eq!(QFormat::WEIGHT.max_value(), 4.0 - 1.0 / 256.0);
        assert_eq!(QFormat::ACTIVATION.min_value(), -512.0);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, QFormat::WEIGHT).raw(), 0);
        assert_eq!(quantize(1.0, QFormat::WEIGHT).raw(), 256);
        let oracle = rational_round_half_up(37, 100, 8);
        assert_eq!(oracle, 95);
        assert_eq!(quantize(0.37, QFormat::WEIGHT).raw(), oracle);
        // exact halves go up, including negatives
        assert_eq!(quantize(0.5 / 256.0, QFormat::WEIGHT).raw(), 1);
        assert_eq!(quantize(-0.5 / 256.0, QFormat::WEIGHT).raw(), 0);
        assert_eq!(quantize(-1.5 / 256.0, QFormat::WEIGHT).raw(), -1);
    }

    #[test]
    fn quantize_saturates_and_counts() {
        let mut sat = SaturationCounter::new();
        assert_eq!(quantize_counted(100.0, QFormat::WEIGHT, &mut sat).raw(), 1023);
        assert_eq!(quantize_counted(-100.0, QFormat::WEIGHT, &mut sat).raw(), -1024);
        assert_eq!(quantize_counted(-4.0, QFormat::WEIGHT, &mut sat).raw(), -1024);
        assert_eq!(quantize_counted(f64::NAN, QFormat::WEIGHT, &mut sat).raw(), 0);
        assert_eq!(sat.count(), 3);
    }

    #[test]
    fn mul_wa_examples() {
        let a = quantize(100.0, QFormat::ACTIVATION);
        let zero = Multiplicand::Weight(QValue::from_raw(0, QFormat::WEIGHT));
        assert_eq!(mul_wa(zero, a).raw(), 0);

        let one = Multiplicand::Weight(QValue::from_raw(256, QFormat::WEIGHT));
        let p = mul_wa(one, a);
        assert_eq!(p.fmt().frac_bits(), 16);
        assert_eq!(p.to_f64(), 100.0);

        let half = Multiplicand::Weight(QValue::from_raw(128, QFormat::WEIGHT));
        assert_eq!(mul_wa(half, a).to_f64(), 50.0);

        let m = Multiplicand::Mask(MaskValue::HALF);
        let p = mul_wa(m, a);
        assert_eq!(p.fmt().frac_bits(), 19);
        assert_eq!(p.to_f64(), 50.0);
    }

    #[test]
    fn clamp255_branches() {
        let acc = |x: f64| quantize(x, QFormat::ACCUMULATOR);
        assert_eq!(clamp255(acc(300.0)).to_f64(), 255.0);
        assert_eq!(clamp255(acc(-400.0)).to_f64(), -255.0);
        assert_eq!(clamp255(acc(17.0)).to_f64(), 17.0);
        assert_eq!(clamp255(acc(255.0)).to_f64(), 255.0);
        assert_eq!(clamp255(acc(-255.0)).to_f64(), -255.0);
        // requantization rounds half up: 1.5/256 -> 2/256, -1.5/256 -> -1/256
        assert_eq!(clamp255_raw(3 << 7, 16), 2);
        assert_eq!(clamp255_raw(-(3 << 7), 16), -1);
    }

    #[test]
    fn sigmoid_examples() {
        let x = |v: f64| quantize(v, QFormat::ACTIVATION);
        assert_eq!(sigmoid_d(x(0.0)).raw(), 1024);
        let hi = sigmoid_d(x(255.0)).to_f64();
        assert!((hi - sigmoid(255.0 / 256.0)).abs() <= 1.0 / 512.0, "{hi}");
        assert!((hi - 0.73036).abs() < 1e-3);
        let lo = sigmoid_d(x(-255.0)).to_f64();
        assert!((lo - 0.26964).abs() < 1e-3);
        assert_eq!(sigmoid_d(x(255.0)).raw() + sigmoid_d(x(-255.0)).raw(), 2048);
    }

    #[test]
    fn sigmoid_lut_exhaustive() {
        let mut prev = 0u16;
        let mut worst = 0.0f64;
        for raw in -ACT_LIMIT_RAW..=ACT_LIMIT_RAW {
            let m = sigmoid_raw(raw);
            assert!(m > 0 && m <= MaskValue::RAW_MAX);
            assert!(m >= prev, "not monotone at {raw}");
            prev = m;
            assert_eq!(u32::from(m) + u32::from(sigmoid_raw(-raw)), 2048);
            let exact = sigmoid(f64::from(raw) / 65536.0);
            worst = worst.max((f64::from(m) / 2048.0 - exact).abs());
        }
        assert!(worst <= 1.0 / 512.0, "worst LUT error {worst}");
    }

    #[test]
    fn attention_product_rounding() {
        assert_eq!(attend_raw(3, 1024), 2);
        assert_eq!(attend_raw(-3, 1024), -1);
        assert_eq!(attend_raw(0, 2047), 0);
        assert_eq!(attend_raw(ACT_LIMIT_RAW, 2047), ACT_LIMIT_RAW - 32);
    }

    #[test]
    fn pixel_round_trip() {
        for p in 0..=255u8 {
            assert_eq!(act_to_pixel(pixel_to_act(p)), p);
        }
        assert_eq!(act_to_pixel(-1000), 0);
        assert_eq!(act_to_pixel(ACT_LIMIT_RAW + 1000), 255);
        assert_eq!(act_to_pixel(128), 1);
        assert_eq!(act_to_pixel(127), 0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clamp255_bounded(acc in QFormat::ACCUMULATOR.raw_min()..=QFormat::ACCUMULATOR.raw_max()) {
                let out = clamp255(QValue::from_raw(acc, QFormat::ACCUMULATOR));
                prop_assert!(out.to_f64().abs() <= 255.0);
            }

            #[test]
            fn quantize_dequantize_round_trip(raw in QFormat::ACTIVATION.raw_min()..=QFormat::ACTIVATION.raw_max()) {
                let q = QValue::from_raw(raw, QFormat::ACTIVATION);
                prop_assert_eq!(quantize(dequantize(q), QFormat::ACTIVATION), q);
                let w = QValue::from_raw(raw % 1024, QFormat::WEIGHT);
                prop_assert_eq!(quantize(dequantize(w), QFormat::WEIGHT), w);
            }

            #[test]
            fn summation_order_is_irrelevant(
                prods in proptest::collection::vec((-1024i64..=1023, -ACT_LIMIT_RAW as i64..=ACT_LIMIT_RAW as i64), 1..1152),
                seed in any::<u64>(),
            ) {
                // 36 * 32 products of maximal magnitude cannot leave 40 bits
                let bound = 36 * 32 * 1024 * i64::from(ACT_LIMIT_RAW);
                prop_assert!(bound <= QFormat::ACCUMULATOR.raw_max());
                let terms: alloc::vec::Vec<i64> = prods.iter().map(|(w, a)| w * a).collect();
                let mut sat = SaturationCounter::new();
                let forward = terms.iter().fold(0i64, |s, t| saturate_acc(s + t, &mut sat));
                let mut shuffled = terms.clone();
                let mut state = seed | 1;
                for i in (1..shuffled.len()).rev() {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    shuffled.swap(i, (state % (i as u64 + 1)) as usize);
                }
                let permuted = shuffled.iter().fold(0i64, |s, t| saturate_acc(s + t, &mut sat));
                prop_assert_eq!(forward, permuted);
                prop_assert_eq!(sat.count(), 0);
            }
        }
    }
}
