//! On-chip buffer capacities and the external-memory traffic ledger.
//!
//! The 232 KB on-chip budget is split into 32 feature banks (160 KB),
//! 32 weight banks (40 KB) and a partial-sum buffer (32 KB). Feature
//! occupancy is computed from the layer program; external traffic is
//! counted byte by byte.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::pesim::schedule::{self, ConvGeometry, LoopOrder, Step, StepKind};
use crate::pesim::{NUM_ARRAYS, PE_COLS, PE_COUNT};
use crate::qarith::QFormat;
use crate::{Error, ModelConfig, Result};

/// Total on-chip memory.
pub const ON_CHIP_BUDGET_BYTES: u64 = 232 * 1024;
pub const ACTIVATION_BITS: u64 = QFormat::ACTIVATION.width() as u64;
pub const WEIGHT_BITS: u64 = QFormat::WEIGHT.width() as u64;
pub const PSUM_ENTRY_BITS: u64 = QFormat::ACCUMULATOR.width() as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SramBankSet {
    pub banks: u64,
    pub weight_bank_bytes: u64,
    pub feature_bank_bytes: u64,
    pub psum_bytes: u64,
}

impl Default for SramBankSet {
    fn default() -> Self {
        Self::new(40 * 1024 / 32, 160 * 1024 / 32, 32 * 1024).expect("default split fits")
    }
}

impl SramBankSet {
    pub fn new(weight_bank_bytes: u64, feature_bank_bytes: u64, psum_bytes: u64) -> Result<Self> {
        let set = Self {
            banks: NUM_ARRAYS as u64,
            weight_bank_bytes,
            feature_bank_bytes,
            psum_bytes,
        };
        if set.total_bytes() > ON_CHIP_BUDGET_BYTES {
            return Err(Error::Config(alloc::format!(
                "{} bytes of SRAM exceed the {} byte budget",
                set.total_bytes(),
                ON_CHIP_BUDGET_BYTES
            )));
        }
        Ok(set)
    }

    pub fn weight_capacity(&self) -> u64 {
        self.banks * self.weight_bank_bytes
    }

    pub fn feature_capacity(&self) -> u64 {
        self.banks * self.feature_bank_bytes
    }

    pub fn psum_capacity(&self) -> u64 {
        self.psum_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.weight_capacity() + self.feature_capacity() + self.psum_capacity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    DramIn,
    DramOut,
    DramWeight,
    /// Intermediate features spilled off chip. Recording any is a violation.
    DramIntermediate,
    SramRead,
    SramWrite,
    Psum,
}

impl AccessKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessKind::DramIn => "dram_in",
            AccessKind::DramOut => "dram_out",
            AccessKind::DramWeight => "dram_weight",
            AccessKind::DramIntermediate => "dram_intermediate",
            AccessKind::SramRead => "sram_read",
            AccessKind::SramWrite => "sram_write",
            AccessKind::Psum => "psum",
        }
    }
}

impl FromStr for AccessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dram_in" => AccessKind::DramIn,
            "dram_out" => AccessKind::DramOut,
            "dram_weight" => AccessKind::DramWeight,
            "dram_intermediate" => AccessKind::DramIntermediate,
            "sram_read" => AccessKind::SramRead,
            "sram_write" => AccessKind::SramWrite,
            "psum" => AccessKind::Psum,
            other => return Err(Error::UnknownAccessKind(other.to_string())),
        })
    }
}

/// Byte counters for every memory access class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DramLedger {
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub bytes_weights: u64,
    pub bytes_intermediate: u64,
    pub sram_read: u64,
    pub sram_write: u64,
    pub psum: u64,
}

impl DramLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, kind: AccessKind, bytes: u64) {
        let slot = match kind {
            AccessKind::DramIn => &mut self.bytes_in,
            AccessKind::DramOut => &mut self.bytes_out,
            AccessKind::DramWeight => &mut self.bytes_weights,
            AccessKind::DramIntermediate => &mut self.bytes_intermediate,
            AccessKind::SramRead => &mut self.sram_read,
            AccessKind::SramWrite => &mut self.sram_write,
            AccessKind::Psum => &mut self.psum,
        };
        *slot += bytes;
    }

    /// Records by kind name, as found in external records.
    pub fn record_named(&mut self, kind: &str, bytes: u64) -> Result<()> {
        self.record(kind.parse()?, bytes);
        Ok(())
    }

    /// External traffic is image input, image output and weights only.
    pub fn check_io_only(&self) -> Result<()> {
        match self.bytes_intermediate {
            0 => Ok(()),
            n => Err(Error::IntermediateTraffic(n)),
        }
    }

    pub fn dram_total(&self) -> u64 {
        self.bytes_in + self.bytes_out + self.bytes_weights + self.bytes_intermediate
    }

    pub fn merge(&mut self, other: &DramLedger) {
        self.bytes_in += other.bytes_in;
        self.bytes_out += other.bytes_out;
        self.bytes_weights += other.bytes_weights;
        self.bytes_intermediate += other.bytes_intermediate;
        self.sram_read += other.sram_read;
        self.sram_write += other.sram_write;
        self.psum += other.psum;
    }
}

/// Bytes of the packed weight store for `params` taps.
pub fn weight_bytes(params: u64) -> u64 {
    (params * WEIGHT_BITS).div_ceil(8)
}

fn act_bytes(values: u64) -> u64 {
    (values * ACTIVATION_BITS).div_ceil(8)
}

/// Peak buffer use of one program step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Footprint {
    pub feature_bytes: u64,
    /// Upper bound on simultaneously live partial sums.
    pub psum_entries: u64,
}

impl Footprint {
    pub fn psum_bytes(&self) -> u64 {
        (self.psum_entries * PSUM_ENTRY_BITS).div_ceil(8)
    }
}

/// Peak feature storage of a convolution that overwrites its input in
/// place as output column bands retire. Occupancy is sampled at the start
/// and after each 6-column band, once dead input columns are released.
fn in_place_peak_values(g: &ConvGeometry) -> u64 {
    let col_in = (g.height * g.in_ch) as u64;
    let col_out = (g.height * g.out_ch) as u64;
    let mut peak = g.width as u64 * col_in;
    for x0 in (0..g.padded_width()).step_by(PE_COLS) {
        // output column ox is complete once padded column ox + kw - 1 is done
        let done = (x0 + PE_COLS + 1).saturating_sub(g.kw).min(g.width);
        let live_in = (0..g.width)
            .filter(|&j| (j + g.pad_left).min(g.width - 1) >= done)
            .count() as u64;
        peak = peak.max(live_in * col_in + done as u64 * col_out);
    }
    peak
}

fn psum_bound(g: &ConvGeometry, live_channels: usize) -> u64 {
    let carried = (g.kw - 1) * g.height * live_channels;
    let strip = g.strip_advance() * (PE_COLS + g.kw - 1) * (live_channels + 1);
    (carried + strip) as u64
}

pub fn step_footprint(step: &Step) -> Footprint {
    match step.kind {
        StepKind::Conv(g) => match g.order {
            LoopOrder::WindowMajor => Footprint {
                feature_bytes: act_bytes(in_place_peak_values(&g)),
                psum_entries: psum_bound(&g, g.out_ch),
            },
            LoopOrder::ChannelMajor => Footprint {
                feature_bytes: act_bytes(((g.in_ch + g.out_ch) * g.height * g.width) as u64),
                psum_entries: psum_bound(&g, 1),
            },
        },
        StepKind::Attention {
            channels,
            height,
            width,
        } => Footprint {
            feature_bytes: act_bytes((channels * height * width) as u64),
            psum_entries: (PE_COUNT * channels) as u64,
        },
        StepKind::TransposePhase(g, _) => Footprint {
            // the input stays resident for all phases; the ×2 output fills in
            feature_bytes: act_bytes((g.in_ch * g.height * g.width + 4 * g.out_ch * g.height * g.width) as u64),
            psum_entries: psum_bound(&g, 1),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassReport {
    pub class: &'static str,
    pub peak_bytes: u64,
    pub capacity_bytes: u64,
    /// Step responsible for the peak.
    pub layer: String,
}

impl ClassReport {
    pub fn pass(&self) -> bool {
        self.peak_bytes <= self.capacity_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityReport {
    pub weight: ClassReport,
    pub feature: ClassReport,
    pub psum: ClassReport,
    pub per_step: Vec<(String, Footprint)>,
}

impl CapacityReport {
    pub fn pass(&self) -> bool {
        self.weight.pass() && self.feature.pass() && self.psum.pass()
    }

    pub fn on_chip_peak_bytes(&self) -> u64 {
        self.weight.peak_bytes + self.feature.peak_bytes + self.psum.peak_bytes
    }

    /// First failing class as an error naming the offending layer.
    pub fn check(&self) -> Result<()> {
        for c in [&self.weight, &self.feature, &self.psum] {
            if !c.pass() {
                return Err(Error::Capacity {
                    layer: c.layer.clone(),
                    buffer: c.class,
                    needed: c.peak_bytes,
                    capacity: c.capacity_bytes,
                });
            }
        }
        Ok(())
    }
}

/// Peak use of each buffer class for a program and weight store.
pub fn capacity_report_for(steps: &[Step], params: u64, banks: &SramBankSet) -> CapacityReport {
    let mut feature = ClassReport {
        class: "feature",
        peak_bytes: 0,
        capacity_bytes: banks.feature_capacity(),
        layer: String::new(),
    };
    let mut psum = ClassReport {
        class: "psum",
        peak_bytes: 0,
        capacity_bytes: banks.psum_capacity(),
        layer: String::new(),
    };
    let mut per_step = Vec::with_capacity(steps.len());
    for step in steps {
        let fp = step_footprint(step);
        if fp.feature_bytes > feature.peak_bytes {
            feature.peak_bytes = fp.feature_bytes;
            feature.layer = step.name.clone();
        }
        if fp.psum_bytes() > psum.peak_bytes {
            psum.peak_bytes = fp.psum_bytes();
            psum.layer = step.name.clone();
        }
        per_step.push((step.name.clone(), fp));
    }
    CapacityReport {
        weight: ClassReport {
            class: "weight",
            peak_bytes: weight_bytes(params),
            capacity_bytes: banks.weight_capacity(),
            layer: "weights".into(),
        },
        feature,
        psum,
        per_step,
    }
}

/// Peak buffer use for `config` running `tile_h × tile_w` tiles. Edge tiles
/// are never larger, so this bounds every tile of every image.
pub fn capacity_report(config: &ModelConfig, tile_h: usize, tile_w: usize, banks: &SramBankSet) -> CapacityReport {
    let steps = schedule::program(config, tile_h, tile_w);
    capacity_report_for(&steps, crate::hpan::param_count(config) as u64, banks)
}

/// Peak buffer use over every distinct tile shape of `plan`.
pub fn plan_capacity_report(config: &ModelConfig, plan: &crate::TilePlan, banks: &SramBankSet) -> CapacityReport {
    let mut shapes: Vec<(usize, usize)> = plan.tiles.iter().map(|t| (t.h, t.w)).collect();
    shapes.sort_unstable();
    shapes.dedup();
    let mut best = capacity_report_for(&[], crate::hpan::param_count(config) as u64, banks);
    for (h, w) in shapes {
        let r = capacity_report(config, h, w, banks);
        if r.feature.peak_bytes > best.feature.peak_bytes {
            best.feature = r.feature.clone();
        }
        if r.psum.peak_bytes > best.psum.peak_bytes {
            best.psum = r.psum.clone();
        }
        best.per_step = r.per_step;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_banks_fill_the_budget() {
        let b = SramBankSet::default();
        assert_eq!(b.feature_capacity(), 160 * 1024);
        assert_eq!(b.weight_capacity(), 40 * 1024);
        assert_eq!(b.total_bytes(), ON_CHIP_BUDGET_BYTES);
        assert!(SramBankSet::new(2048, 5120, 32 * 1024).is_err());
    }

    #[test]
    fn ledger_records_and_rejects_unknown_kinds() {
        let mut l = DramLedger::new();
        assert_eq!(l, DramLedger::default());
        l.record_named("dram_in", 10).unwrap();
        l.record(AccessKind::DramOut, 40);
        assert!(matches!(l.record_named("dram_cache", 1), Err(Error::UnknownAccessKind(_))));
        assert_eq!((l.bytes_in, l.bytes_out, l.dram_total()), (10, 40, 50));
        assert!(l.check_io_only().is_ok());
        l.record(AccessKind::DramIntermediate, 3);
        assert_eq!(l.check_io_only(), Err(Error::IntermediateTraffic(3)));
    }

    #[test]
    fn default_model_capacity() {
        let r = capacity_report(&ModelConfig::default(), 48, 40, &SramBankSet::default());
        assert_eq!(r.weight.peak_bytes, 35_640);
        // one full 32-channel tile map is 138,240 bytes; the peak adds the
        // retained tail input's ×2 output plane
        assert_eq!(act_bytes(32 * 48 * 40), 138_240);
        assert_eq!(r.feature.peak_bytes, 138_240 + 17_280);
        assert_eq!(r.feature.layer, "tail.p00");
        assert!(r.pass(), "{r:?}");
        assert!(r.on_chip_peak_bytes() <= ON_CHIP_BUDGET_BYTES);
    }

    #[test]
    fn in_place_conv_holds_one_extra_column() {
        let g = ConvGeometry::same(32, 32, 48, 40, 3, LoopOrder::WindowMajor);
        assert_eq!(in_place_peak_values(&g), 41 * 48 * 32);
        let g = ConvGeometry::same(32, 32, 48, 40, 1, LoopOrder::WindowMajor);
        assert_eq!(in_place_peak_values(&g), 40 * 48 * 32);
    }

    #[test]
    fn plan_peak_depends_on_tile_size_only() {
        let cfg = ModelConfig::default();
        let banks = SramBankSet::default();
        let small = plan_capacity_report(&cfg, &crate::tiler::split_default(96, 80), &banks);
        let large = plan_capacity_report(&cfg, &crate::tiler::split_default(400, 480), &banks);
        assert_eq!(small.on_chip_peak_bytes(), large.on_chip_peak_bytes());
    }

    #[test]
    fn empty_program_has_zero_peaks() {
        let r = capacity_report_for(&[], 0, &SramBankSet::default());
        assert_eq!(r.on_chip_peak_bytes(), 0);
        assert!(r.per_step.is_empty());
    }

    #[test]
    fn oversized_tiles_fail_naming_a_layer() {
        let r = capacity_report(&ModelConfig::default(), 96, 80, &SramBankSet::default());
        match r.check() {
            Err(Error::Capacity { layer, buffer, .. }) => {
                assert_eq!(buffer, "feature");
                assert!(!layer.is_empty());
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }
}
