//! Cycle-level model of the accelerator core.
//!
//! Thirty-two 6×6 PE arrays each serve one input channel. In convolution
//! mode a kernel row sits in a circular register per array; its last slot is
//! broadcast down every PE column and a right shift brings the next tap, so a
//! `kh × kw` kernel takes `kh · kw` cycles per window and output channel. A
//! three-stage accumulator sums the 32 arrays per PE position and the
//! selective adder merges the result into the partial-sum buffer. In
//! attention mode every PE multiplies by its own mask value and the products
//! pass straight through.
//!
//! Window and weight-row loads are double-buffered and cost no cycles.

pub mod accum;
pub mod array;
pub mod cycles;
pub mod schedule;
pub mod trace;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::hpan::{finish_activation, FeatureMap, LayerKind, LayerWeights, MaskMap, Model};
use crate::memmodel::{self, AccessKind, DramLedger, SramBankSet};
use crate::qarith::{self, MaskValue, QFormat, SaturationCounter};
use crate::tiler::{self, StitchedOutput, TilePlan};
use crate::{Error, Result};

use accum::{AccumPipeline, Packet, Tag, NO_DEST};
use array::{PeArray, PeMode};
use schedule::{ConvGeometry, KernelRef, LoopOrder, PhaseKernel, Step, StepKind};
use trace::{TraceEvent, TraceOp, Tracer, Unit};

pub const PE_ROWS: usize = 6;
pub const PE_COLS: usize = 6;
pub const PE_COUNT: usize = PE_ROWS * PE_COLS;
pub const NUM_ARRAYS: usize = 32;
pub const STAGE1_FAN_IN: usize = 8;
/// Multipliers in the fabric, i.e. the most MACs one cycle can perform.
pub const MACS_PER_CYCLE: u64 = (PE_COUNT * NUM_ARRAYS) as u64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SramCounters {
    pub feature_reads: u64,
    pub feature_writes: u64,
    pub weight_reads: u64,
    pub psum_reads: u64,
    pub psum_writes: u64,
}

impl SramCounters {
    fn add(&mut self, o: &SramCounters) {
        self.feature_reads += o.feature_reads;
        self.feature_writes += o.feature_writes;
        self.weight_reads += o.weight_reads;
        self.psum_reads += o.psum_reads;
        self.psum_writes += o.psum_writes;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerStats {
    pub name: String,
    pub cycles: u64,
    pub mac_ops: u64,
    pub sram: SramCounters,
    /// Most partial sums held at once.
    pub psum_peak: u64,
    pub feature_peak_bytes: u64,
    pub saturation_events: u64,
}

impl LayerStats {
    fn named(name: String) -> Self {
        Self {
            name,
            ..Default::default()
        }
    }

    pub fn utilization(&self) -> f64 {
        utilization(self.mac_ops, self.cycles)
    }

    fn absorb(&mut self, o: &LayerStats) {
        self.cycles += o.cycles;
        self.mac_ops += o.mac_ops;
        self.sram.add(&o.sram);
        self.psum_peak = self.psum_peak.max(o.psum_peak);
        self.feature_peak_bytes = self.feature_peak_bytes.max(o.feature_peak_bytes);
        self.saturation_events += o.saturation_events;
    }
}

fn utilization(macs: u64, cycles: u64) -> f64 {
    if cycles == 0 {
        0.0
    } else {
        macs as f64 / (cycles * MACS_PER_CYCLE) as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub cycles: u64,
    /// Multiplications routed to some output, padding taps included.
    pub mac_ops: u64,
    pub sram: SramCounters,
    /// Partial-sum buffer high-water mark, in entries.
    pub psum_buffer_peak: u64,
    pub feature_peak_bytes: u64,
    pub saturation_events: u64,
    pub stage1_adds: u64,
    pub stage2_adds: u64,
    pub tiles: u64,
    pub layers: Vec<LayerStats>,
}

impl SimStats {
    pub fn utilization(&self) -> f64 {
        utilization(self.mac_ops, self.cycles)
    }

    pub fn psum_peak_bytes(&self) -> u64 {
        (self.psum_buffer_peak * memmodel::PSUM_ENTRY_BITS).div_ceil(8)
    }

    fn push_layer(&mut self, l: LayerStats) {
        self.cycles += l.cycles;
        self.mac_ops += l.mac_ops;
        self.sram.add(&l.sram);
        self.psum_buffer_peak = self.psum_buffer_peak.max(l.psum_peak);
        self.feature_peak_bytes = self.feature_peak_bytes.max(l.feature_peak_bytes);
        self.saturation_events += l.saturation_events;
        self.layers.push(l);
    }

    /// Sums counters and keeps the larger peaks. Layers with the same name
    /// are combined.
    pub fn merge(&mut self, other: &SimStats) {
        self.cycles += other.cycles;
        self.mac_ops += other.mac_ops;
        self.sram.add(&other.sram);
        self.psum_buffer_peak = self.psum_buffer_peak.max(other.psum_buffer_peak);
        self.feature_peak_bytes = self.feature_peak_bytes.max(other.feature_peak_bytes);
        self.saturation_events += other.saturation_events;
        self.stage1_adds += other.stage1_adds;
        self.stage2_adds += other.stage2_adds;
        self.tiles += other.tiles;
        for l in &other.layers {
            match self.layers.iter_mut().find(|m| m.name == l.name) {
                Some(m) => m.absorb(l),
                None => self.layers.push(l.clone()),
            }
        }
    }
}

/// Dense partial-sum store for one job, with per-entry outstanding
/// contribution counts.
#[derive(Debug, Default)]
struct Psum {
    values: Vec<i64>,
    remaining: Vec<u32>,
    expected: u32,
    height: usize,
    width: usize,
    live: u64,
    peak: u64,
}

impl Psum {
    fn begin(&mut self, channels: usize, height: usize, width: usize, expected: usize) {
        let n = channels * height * width;
        self.values.clear();
        self.values.resize(n, 0);
        self.remaining.clear();
        self.remaining.resize(n, expected as u32);
        self.expected = expected as u32;
        self.height = height;
        self.width = width;
        self.live = 0;
        self.peak = 0;
    }

    fn decode(&self, d: usize) -> (usize, usize, usize) {
        let plane = self.height * self.width;
        (d / plane, (d % plane) / self.width, d % self.width)
    }

    fn all_done(&self) -> bool {
        self.live == 0 && self.remaining.iter().all(|&r| r == 0)
    }
}

/// Where finished partial sums go.
enum Sink<'a> {
    Activations(&'a mut FeatureMap),
    /// Sigmoid into the mask registers of the array serving that channel.
    Masks,
    /// One phase of a ×2 map.
    Phase { out: &'a mut FeatureMap, py: usize, px: usize },
}

struct Outputs<'a> {
    sink: Sink<'a>,
    attended: Option<&'a mut FeatureMap>,
}

/// One core. Deterministic and sequential; run one per tile in parallel.
pub struct Simulator<'t> {
    arrays: Vec<PeArray>,
    pipe: AccumPipeline,
    psum: Psum,
    cycle: u64,
    sat: SaturationCounter,
    banks: SramBankSet,
    tracer: Option<&'t mut dyn Tracer>,
    cur: LayerStats,
}

impl Default for Simulator<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'t> Simulator<'t> {
    pub fn new() -> Self {
        Self::with_banks(SramBankSet::default())
    }

    pub fn with_banks(banks: SramBankSet) -> Self {
        Self {
            arrays: vec![PeArray::default(); NUM_ARRAYS],
            pipe: AccumPipeline::new(),
            psum: Psum::default(),
            cycle: 0,
            sat: SaturationCounter::new(),
            banks,
            tracer: None,
            cur: LayerStats::default(),
        }
    }

    pub fn with_tracer(mut self, tracer: &'t mut dyn Tracer) -> Self {
        self.tracer = Some(tracer);
        self
    }

    /// Cycles elapsed since construction.
    pub fn cycles(&self) -> u64 {
        self.cycle
    }

    pub fn arrays(&self) -> &[PeArray] {
        &self.arrays
    }

    // ---- public jobs -------------------------------------------------

    /// Same-padded convolution of `x`. Kernels must be 1×1, 3×3 or 5×5.
    pub fn run_conv_layer(&mut self, x: &FeatureMap, w: &LayerWeights) -> Result<(FeatureMap, SimStats)> {
        if w.kind != LayerKind::Conv || w.kernel_h != w.kernel_w || ![1, 3, 5].contains(&w.kernel_h) {
            return Err(Error::UnsupportedKernel {
                layer: "conv".into(),
                kh: w.kernel_h,
                kw: w.kernel_w,
            });
        }
        check_channels("conv", x, w.in_ch)?;
        let order = if w.in_ch == w.out_ch {
            LoopOrder::WindowMajor
        } else {
            LoopOrder::ChannelMajor
        };
        let step = Step {
            name: "conv".into(),
            kind: StepKind::Conv(ConvGeometry::same(
                w.in_ch,
                w.out_ch,
                x.height(),
                x.width(),
                w.kernel_h,
                order,
            )),
        };
        let mut stats = SimStats::default();
        let out = self.exec_conv(&step, x, KernelRef::Direct(w), &mut stats);
        Ok((out, stats))
    }

    /// Element-wise product of `x` and `mask` in attention mode.
    pub fn run_attention(&mut self, x: &FeatureMap, mask: &MaskMap) -> Result<(FeatureMap, SimStats)> {
        if (x.channels(), x.height(), x.width()) != (mask.channels(), mask.height(), mask.width()) {
            return Err(Error::Config(format!(
                "mask {}x{}x{} does not match features {}x{}x{}",
                mask.channels(),
                mask.height(),
                mask.width(),
                x.channels(),
                x.height(),
                x.width()
            )));
        }
        let step = Step {
            name: "attention".into(),
            kind: StepKind::Attention {
                channels: x.channels(),
                height: x.height(),
                width: x.width(),
            },
        };
        let mut stats = SimStats::default();
        let mut out = FeatureMap::zeros(x.channels(), x.height(), x.width());
        self.job(&step, &mut stats, |sim| sim.attention_only(x, mask, &mut out));
        Ok((out, stats))
    }

    /// Mask convolution, sigmoid and multiply, window by window.
    pub fn run_pixel_attention(&mut self, x: &FeatureMap, w_mask: &LayerWeights) -> Result<(FeatureMap, SimStats)> {
        check_mask_weights(x, w_mask)?;
        let step = Step {
            name: "attn".into(),
            kind: StepKind::Attention {
                channels: x.channels(),
                height: x.height(),
                width: x.width(),
            },
        };
        let mut stats = SimStats::default();
        let out = self.exec_attention_block(&step, x, w_mask, &mut stats);
        Ok((out, stats))
    }

    /// Stride-2 transposed convolution as four phase convolutions.
    pub fn run_transpose_layer(&mut self, x: &FeatureMap, tail: &LayerWeights) -> Result<(FeatureMap, SimStats)> {
        check_tail(x, tail)?;
        let mut stats = SimStats::default();
        let mut out = FeatureMap::zeros(tail.out_ch, 2 * x.height(), 2 * x.width());
        for ph in PhaseKernel::all(tail.kernel_h, tail.kernel_w) {
            let g = ConvGeometry {
                out_ch: tail.out_ch,
                ..schedule::phase_geometry(tail.in_ch, x.height(), x.width(), ph)
            };
            let step = Step {
                name: format!("tail.p{}{}", ph.py, ph.px),
                kind: StepKind::TransposePhase(g, ph),
            };
            self.exec_phase(&step, x, tail, &mut out, &mut stats);
        }
        Ok((out, stats))
    }

    /// Whole network on one tile through the on-chip buffers.
    pub fn simulate_model(&mut self, tile: &FeatureMap, model: &Model) -> Result<(FeatureMap, SimStats)> {
        model.config.validate()?;
        check_channels("head", tile, 1)?;
        check_tail_kernel(&model.tail)?;
        let steps = schedule::program(&model.config, tile.height(), tile.width());
        memmodel::capacity_report_for(&steps, model.param_count() as u64, &self.banks).check()?;

        let mut stats = SimStats {
            tiles: 1,
            ..Default::default()
        };
        let mut it = steps.iter();
        let mut f = self.exec_conv(it.next().expect("head step"), tile, KernelRef::Direct(&model.head), &mut stats);
        for b in &model.blocks {
            f = self.exec_conv(it.next().expect("pw step"), &f, KernelRef::Direct(&b.pw), &mut stats);
            f = self.exec_attention_block(it.next().expect("attn step"), &f, &b.mask, &mut stats);
            f = self.exec_conv(it.next().expect("sp step"), &f, KernelRef::Direct(&b.sp), &mut stats);
        }
        let mut out = FeatureMap::zeros(model.tail.out_ch, 2 * tile.height(), 2 * tile.width());
        for step in it {
            self.exec_phase(step, &f, &model.tail, &mut out, &mut stats);
        }
        Ok((out, stats))
    }

    // ---- step execution ----------------------------------------------

    fn job(&mut self, step: &Step, stats: &mut SimStats, body: impl FnOnce(&mut Self)) {
        self.cur = LayerStats::named(step.name.clone());
        let sat0 = self.sat.count();
        let adds0 = (self.pipe.stage1_adds, self.pipe.stage2_adds);
        body(self);
        debug_assert!(self.pipe.is_empty());
        let mut l = core::mem::take(&mut self.cur);
        l.saturation_events = self.sat.count() - sat0;
        l.psum_peak = self.psum.peak;
        l.feature_peak_bytes = memmodel::step_footprint(step).feature_bytes;
        stats.stage1_adds += self.pipe.stage1_adds - adds0.0;
        stats.stage2_adds += self.pipe.stage2_adds - adds0.1;
        stats.push_layer(l);
    }

    fn exec_conv(&mut self, step: &Step, x: &FeatureMap, kernel: KernelRef, stats: &mut SimStats) -> FeatureMap {
        let StepKind::Conv(g) = step.kind else {
            unreachable!("{} is not a convolution", step.name)
        };
        let mut out = FeatureMap::zeros(g.out_ch, g.height, g.width);
        self.job(step, stats, |sim| {
            let mut outs = Outputs {
                sink: Sink::Activations(&mut out),
                attended: None,
            };
            sim.conv_job(x, kernel, &g, &mut outs);
        });
        out
    }

    fn exec_phase(&mut self, step: &Step, x: &FeatureMap, tail: &LayerWeights, out: &mut FeatureMap, stats: &mut SimStats) {
        let StepKind::TransposePhase(g, ph) = step.kind else {
            unreachable!("{} is not a transpose phase", step.name)
        };
        self.job(step, stats, |sim| {
            let mut outs = Outputs {
                sink: Sink::Phase {
                    out,
                    py: ph.py,
                    px: ph.px,
                },
                attended: None,
            };
            sim.conv_job(x, KernelRef::Phase(tail, ph), &g, &mut outs);
        });
    }

    fn exec_attention_block(&mut self, step: &Step, x: &FeatureMap, w_mask: &LayerWeights, stats: &mut SimStats) -> FeatureMap {
        let mut out = FeatureMap::zeros(x.channels(), x.height(), x.width());
        self.job(step, stats, |sim| sim.attention_block(x, w_mask, &mut out));
        out
    }

    // ---- schedules -----------------------------------------------------

    fn conv_job(&mut self, x: &FeatureMap, kernel: KernelRef, g: &ConvGeometry, outs: &mut Outputs) {
        debug_assert!(g.fits_fabric());
        let groups = g.channel_groups();
        self.psum.begin(g.out_ch, g.height, g.width, g.kh * g.kw * groups);
        let adv = g.strip_advance();
        let pw = g.padded_width();
        match g.order {
            LoopOrder::WindowMajor => {
                for x0 in (0..pw).step_by(PE_COLS) {
                    for y0 in (0..g.height).step_by(adv) {
                        for grp in 0..groups {
                            let active = self.load_window(x, grp, y0, x0, g.pad_top, g.pad_left);
                            for o in 0..g.out_ch {
                                self.conv_pass(kernel, g, grp, active, o, y0, x0, outs);
                            }
                        }
                    }
                }
            }
            LoopOrder::ChannelMajor => {
                for o in 0..g.out_ch {
                    for x0 in (0..pw).step_by(PE_COLS) {
                        for y0 in (0..g.height).step_by(adv) {
                            for grp in 0..groups {
                                let active = self.load_window(x, grp, y0, x0, g.pad_top, g.pad_left);
                                self.conv_pass(kernel, g, grp, active, o, y0, x0, outs);
                            }
                        }
                    }
                }
            }
        }
        self.drain(outs);
    }

    /// Caches the padded 6×6 window at `(y0, x0)` of channel group `grp`.
    /// Returns the number of arrays in use.
    fn load_window(&mut self, x: &FeatureMap, grp: usize, y0: usize, x0: usize, pad_top: usize, pad_left: usize) -> usize {
        let active = (x.channels() - grp * NUM_ARRAYS).min(NUM_ARRAYS);
        let (h, w) = (x.height(), x.width());
        let mut reads = 0u64;
        for (a, arr) in self.arrays.iter_mut().enumerate() {
            if a >= active {
                arr.channel = None;
                continue;
            }
            let ch = grp * NUM_ARRAYS + a;
            arr.channel = Some(ch);
            arr.mode = PeMode::Conv;
            let plane = x.plane(ch);
            let feats = arr.features_mut();
            for yy in 0..PE_ROWS {
                let iy = (y0 + yy).wrapping_sub(pad_top);
                for xx in 0..PE_COLS {
                    let ix = (x0 + xx).wrapping_sub(pad_left);
                    feats[yy * PE_COLS + xx] = if iy < h && ix < w {
                        reads += 1;
                        plane[iy * w + ix]
                    } else {
                        0
                    };
                }
            }
        }
        self.cur.sram.feature_reads += reads;
        active
    }

    /// All `kh · kw` cycles of one output channel on the cached window.
    #[allow(clippy::too_many_arguments)]
    fn conv_pass(
        &mut self,
        kernel: KernelRef,
        g: &ConvGeometry,
        grp: usize,
        active: usize,
        o: usize,
        y0: usize,
        x0: usize,
        outs: &mut Outputs,
    ) {
        let adv = g.strip_advance();
        for r in 0..g.kh {
            for a in 0..active {
                let ch = grp * NUM_ARRAYS + a;
                self.arrays[a].load_weight_row((0..g.kw).map(|s| kernel.tap(o, ch, r, s)));
            }
            self.cur.sram.weight_reads += (active * g.kw) as u64;
            for s in 0..g.kw {
                let mut dest = [NO_DEST; PE_COUNT];
                let mut valid = 0;
                // PE (yy, xx) holding padded pixel (y0 + yy, x0 + xx) feeds
                // output (y0 + yy - r, x0 + xx - s)
                for yy in r..r + adv {
                    let oy = y0 + yy - r;
                    if oy >= g.height {
                        break;
                    }
                    for xx in 0..PE_COLS {
                        let Some(ox) = (x0 + xx).checked_sub(s) else { continue };
                        if ox < g.width {
                            dest[yy * PE_COLS + xx] = ((o * g.height + oy) * g.width + ox) as u32;
                            valid += 1;
                        }
                    }
                }
                self.issue_conv(active, dest, valid, TraceOp::Mac { o, r, s, arrays: active }, outs);
                for arr in &mut self.arrays[..active] {
                    arr.shift_weights();
                }
            }
        }
    }

    /// Per 6×6 window: the 1×1 mask convolution for every channel, a drain
    /// while the last masks reach the mask registers, then one attention
    /// multiply of the same cached window.
    fn attention_block(&mut self, x: &FeatureMap, w: &LayerWeights, out: &mut FeatureMap) {
        let (c, h, wd) = (x.channels(), x.height(), x.width());
        self.psum.begin(c, h, wd, 1);
        let mut outs = Outputs {
            sink: Sink::Masks,
            attended: Some(out),
        };
        for x0 in (0..wd).step_by(PE_COLS) {
            for y0 in (0..h).step_by(PE_ROWS) {
                let active = self.load_window(x, 0, y0, x0, 0, 0);
                for arr in &mut self.arrays[..active] {
                    for pe in 0..PE_COUNT {
                        arr.set_mask(pe, 0);
                    }
                }
                for o in 0..c {
                    for a in 0..active {
                        self.arrays[a].load_weight_row(core::iter::once(w.tap(o, a, 0, 0)));
                    }
                    self.cur.sram.weight_reads += active as u64;
                    let mut dest = [NO_DEST; PE_COUNT];
                    let mut valid = 0;
                    for yy in 0..PE_ROWS.min(h - y0) {
                        for xx in 0..PE_COLS.min(wd - x0) {
                            dest[yy * PE_COLS + xx] = ((o * h + y0 + yy) * wd + x0 + xx) as u32;
                            valid += 1;
                        }
                    }
                    self.issue_conv(active, dest, valid, TraceOp::Mac { o, r: 0, s: 0, arrays: active }, &mut outs);
                }
                for _ in 0..AccumPipeline::DEPTH {
                    self.clock(None, TraceOp::Bubble, &mut outs);
                }
                for arr in &mut self.arrays[..active] {
                    arr.mode = PeMode::Attention;
                }
                self.issue_attention(active, 0, y0, x0, h, wd, &mut outs);
                for arr in &mut self.arrays[..active] {
                    arr.mode = PeMode::Conv;
                }
            }
        }
        self.drain(&mut outs);
    }

    fn attention_only(&mut self, x: &FeatureMap, mask: &MaskMap, out: &mut FeatureMap) {
        let (c, h, wd) = (x.channels(), x.height(), x.width());
        self.psum.begin(0, h, wd, 0);
        let mut outs = Outputs {
            sink: Sink::Masks,
            attended: Some(out),
        };
        for x0 in (0..wd).step_by(PE_COLS) {
            for y0 in (0..h).step_by(PE_ROWS) {
                for grp in 0..c.div_ceil(NUM_ARRAYS) {
                    let active = self.load_window(x, grp, y0, x0, 0, 0);
                    let mut reads = 0;
                    for (a, arr) in self.arrays[..active].iter_mut().enumerate() {
                        let ch = grp * NUM_ARRAYS + a;
                        for yy in 0..PE_ROWS {
                            for xx in 0..PE_COLS {
                                let (y, x) = (y0 + yy, x0 + xx);
                                let m = if y < h && x < wd {
                                    reads += 1;
                                    mask.get(ch, y, x)
                                } else {
                                    0
                                };
                                arr.set_mask(yy * PE_COLS + xx, m);
                            }
                        }
                        arr.mode = PeMode::Attention;
                    }
                    self.cur.sram.feature_reads += reads;
                    self.issue_attention(active, grp, y0, x0, h, wd, &mut outs);
                }
            }
        }
        self.drain(&mut outs);
    }

    // ---- datapath --------------------------------------------------------

    fn issue_conv(&mut self, active: usize, dest: [u32; PE_COUNT], valid: usize, op: TraceOp, outs: &mut Outputs) {
        let mut lanes = self.pipe.buffer();
        for (arr, lane) in self.arrays[..active].iter().zip(lanes.iter_mut()) {
            arr.multiply(lane);
        }
        self.cur.mac_ops += (valid * active) as u64;
        let p = Packet {
            mode: PeMode::Conv,
            active,
            lanes,
            tag: Tag::Conv { dest },
        };
        self.clock(Some(p), op, outs);
    }

    #[allow(clippy::too_many_arguments)]
    fn issue_attention(&mut self, active: usize, group: usize, y0: usize, x0: usize, h: usize, w: usize, outs: &mut Outputs) {
        let mut lanes = self.pipe.buffer();
        for (arr, lane) in self.arrays[..active].iter().zip(lanes.iter_mut()) {
            debug_assert_eq!(arr.mode, PeMode::Attention);
            arr.multiply(lane);
        }
        let valid = PE_ROWS.min(h - y0) * PE_COLS.min(w - x0);
        self.cur.mac_ops += (valid * active) as u64;
        let p = Packet {
            mode: PeMode::Attention,
            active,
            lanes,
            tag: Tag::Attention { group, y0, x0 },
        };
        self.clock(Some(p), TraceOp::Attend { y0, x0, arrays: active }, outs);
    }

    fn drain(&mut self, outs: &mut Outputs) {
        for _ in 0..AccumPipeline::DEPTH {
            self.clock(None, TraceOp::Bubble, outs);
        }
        debug_assert!(self.psum.all_done(), "partial sums left unfinished");
    }

    fn trace(&mut self, unit: Unit, op: TraceOp) {
        if let Some(t) = self.tracer.as_deref_mut() {
            t.event(TraceEvent {
                cycle: self.cycle,
                unit,
                op,
            });
        }
    }

    fn clock(&mut self, issued: Option<Packet>, op: TraceOp, outs: &mut Outputs) {
        self.trace(Unit::Pe, op);
        if let Some(p) = self.pipe.step(issued) {
            self.selective_add(p, outs);
        }
        self.cycle += 1;
        self.cur.cycles += 1;
    }

    /// Third accumulator stage.
    fn selective_add(&mut self, p: Packet, outs: &mut Outputs) {
        match p.tag {
            Tag::Conv { dest } => {
                let sums = &p.lanes[0];
                let (mut entries, mut finished) = (0, 0);
                for (&d, &v) in dest.iter().zip(sums) {
                    if d == NO_DEST {
                        continue;
                    }
                    entries += 1;
                    finished += usize::from(self.accumulate(d as usize, v, outs));
                }
                self.psum.peak = self.psum.peak.max(self.psum.live);
                self.trace(Unit::Stage3, TraceOp::Accumulate { entries, finished });
            }
            Tag::Attention { group, y0, x0 } => {
                let out = outs.attended.as_deref_mut().expect("attention output");
                let (h, w) = (out.height(), out.width());
                let mut values = 0;
                for (a, lane) in p.lanes[..p.active].iter().enumerate() {
                    let ch = group * NUM_ARRAYS + a;
                    for (pe, &prod) in lane.iter().enumerate() {
                        let (y, x) = (y0 + pe / PE_COLS, x0 + pe % PE_COLS);
                        if y < h && x < w {
                            out.set(ch, y, x, qarith::round_shift(prod, MaskValue::FRAC_BITS) as i32);
                            values += 1;
                        }
                    }
                }
                self.cur.sram.feature_writes += values as u64;
                self.trace(Unit::Stage3, TraceOp::PassThrough { values });
            }
        }
        self.pipe.recycle(p);
    }

    /// Adds one contribution; returns whether the entry is now complete.
    fn accumulate(&mut self, d: usize, v: i64, outs: &mut Outputs) -> bool {
        let ps = &mut self.psum;
        if ps.remaining[d] == ps.expected {
            ps.live += 1;
        } else {
            self.cur.sram.psum_reads += 1;
        }
        ps.values[d] += v;
        ps.remaining[d] -= 1;
        if ps.remaining[d] != 0 {
            self.cur.sram.psum_writes += 1;
            return false;
        }
        ps.live -= 1;
        let acc = qarith::saturate_acc(ps.values[d], &mut self.sat);
        let (o, oy, ox) = ps.decode(d);
        let act = finish_activation(acc, QFormat::ACCUMULATOR.frac_bits(), &mut self.sat);
        match &mut outs.sink {
            Sink::Activations(map) => {
                map.set(o, oy, ox, act);
                self.cur.sram.feature_writes += 1;
            }
            Sink::Masks => {
                let pe = (oy % PE_ROWS) * PE_COLS + ox % PE_COLS;
                self.arrays[o].set_mask(pe, qarith::sigmoid_raw(act));
            }
            Sink::Phase { out, py, px } => {
                out.set(o, 2 * oy + *py, 2 * ox + *px, act);
                self.cur.sram.feature_writes += 1;
            }
        }
        true
    }
}

fn check_channels(layer: &str, x: &FeatureMap, expected: usize) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::ChannelMismatch {
            layer: layer.into(),
            expected,
            found: x.channels(),
        });
    }
    Ok(())
}

fn check_mask_weights(x: &FeatureMap, w: &LayerWeights) -> Result<()> {
    if w.kind != LayerKind::Conv || w.kernel_h != 1 || w.kernel_w != 1 || w.in_ch != w.out_ch {
        return Err(Error::UnsupportedKernel {
            layer: "attn".into(),
            kh: w.kernel_h,
            kw: w.kernel_w,
        });
    }
    if w.in_ch > NUM_ARRAYS {
        return Err(Error::Config(format!("{} attention channels exceed {NUM_ARRAYS} arrays", w.in_ch)));
    }
    check_channels("attn", x, w.in_ch)
}

fn check_tail(x: &FeatureMap, tail: &LayerWeights) -> Result<()> {
    check_tail_kernel(tail)?;
    check_channels("tail", x, tail.in_ch)
}

fn check_tail_kernel(tail: &LayerWeights) -> Result<()> {
    if tail.kind != LayerKind::TransposeConv {
        return Err(Error::Config("tail must be a transposed convolution".into()));
    }
    for ph in PhaseKernel::all(tail.kernel_h, tail.kernel_w) {
        if ph.kh > PE_ROWS || ph.kw > PE_COLS {
            return Err(Error::UnsupportedKernel {
                layer: "tail".into(),
                kh: tail.kernel_h,
                kw: tail.kernel_w,
            });
        }
    }
    Ok(())
}

/// Runs every tile of `plan` through one simulator each, recording image
/// traffic in `ledger`, and stitches the results.
pub fn simulate_image(
    input: &FeatureMap,
    model: &Model,
    plan: &TilePlan,
    ledger: &mut DramLedger,
) -> Result<(StitchedOutput, SimStats)> {
    let mut stats = SimStats::default();
    let mut outputs = Vec::with_capacity(plan.tile_count());
    for (idx, tile) in tiler::extract_tiles(input, plan).into_iter().enumerate() {
        ledger.record(AccessKind::DramIn, tiler::tile_io_bytes(&tile));
        let (out, s) = Simulator::new().simulate_model(&tile, model)?;
        ledger.record(AccessKind::DramOut, tiler::tile_io_bytes(&out));
        stats.merge(&s);
        outputs.push((idx, out));
    }
    Ok((tiler::stitch(outputs, plan, model.config.scale)?, stats))
}
