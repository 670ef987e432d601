//! Three-stage accumulator.
//!
//! Stage 1 has four 8-input adders: the partial sums of eight arrays (same
//! PE position, different channels) collapse into one. Stage 2 folds the
//! four stage-1 results into the 32-channel sum. Stage 3, the selective
//! adder, is applied by the simulator: in convolution mode it adds into the
//! partial-sum buffer, in attention mode it passes each product through.
//! In attention mode stages 1 and 2 only carry the products forward.

use alloc::boxed::Box;
use alloc::vec::Vec;

use super::array::PeMode;
use super::{NUM_ARRAYS, PE_COUNT, STAGE1_FAN_IN};

/// Sentinel destination for a PE whose product belongs to no output.
pub const NO_DEST: u32 = u32::MAX;

pub type LaneBuf = Box<[[i64; PE_COUNT]; NUM_ARRAYS]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    /// Flat partial-sum index per PE position, or [`NO_DEST`].
    Conv { dest: [u32; PE_COUNT] },
    /// Products of channel `group * 32 + lane` at window origin `(y0, x0)`.
    Attention { group: usize, y0: usize, x0: usize },
}

#[derive(Debug)]
pub struct Packet {
    pub mode: PeMode,
    /// Lanes (arrays) carrying data; the rest are zero.
    pub active: usize,
    pub lanes: LaneBuf,
    pub tag: Tag,
}

#[derive(Debug, Default)]
pub struct AccumPipeline {
    pe_reg: Option<Packet>,
    stage1: Option<Packet>,
    stage2: Option<Packet>,
    pool: Vec<LaneBuf>,
    /// 8-input additions performed by stage 1.
    pub stage1_adds: u64,
    /// 4-input additions performed by stage 2.
    pub stage2_adds: u64,
}

impl AccumPipeline {
    pub const DEPTH: u64 = 3;

    pub fn new() -> Self {
        Self::default()
    }

    /// A lane buffer for the PE arrays to fill.
    pub fn buffer(&mut self) -> LaneBuf {
        self.pool.pop().unwrap_or_else(|| Box::new([[0; PE_COUNT]; NUM_ARRAYS]))
    }

    pub fn recycle(&mut self, p: Packet) {
        self.pool.push(p.lanes);
    }

    pub fn is_empty(&self) -> bool {
        self.pe_reg.is_none() && self.stage1.is_none() && self.stage2.is_none()
    }

    /// Advances one clock. `issued` is this cycle's PE output; the return
    /// value is the packet reaching the selective adder.
    pub fn step(&mut self, issued: Option<Packet>) -> Option<Packet> {
        let to_stage3 = self.stage2.take();
        self.stage2 = self.stage1.take().map(|p| self.reduce_stage2(p));
        self.stage1 = self.pe_reg.take().map(|p| self.reduce_stage1(p));
        self.pe_reg = issued;
        to_stage3
    }

    fn reduce_stage1(&mut self, mut p: Packet) -> Packet {
        if p.mode == PeMode::Conv {
            let groups = NUM_ARRAYS / STAGE1_FAN_IN;
            for g in 0..groups {
                let mut sum = [0i64; PE_COUNT];
                for lane in g * STAGE1_FAN_IN..((g + 1) * STAGE1_FAN_IN).min(p.active) {
                    for (s, v) in sum.iter_mut().zip(&p.lanes[lane]) {
                        *s += v;
                    }
                }
                p.lanes[g] = sum;
                self.stage1_adds += 1;
            }
            p.active = groups;
        }
        p
    }

    fn reduce_stage2(&mut self, mut p: Packet) -> Packet {
        if p.mode == PeMode::Conv {
            let mut sum = [0i64; PE_COUNT];
            for lane in 0..p.active {
                for (s, v) in sum.iter_mut().zip(&p.lanes[lane]) {
                    *s += v;
                }
            }
            p.lanes[0] = sum;
            p.active = 1;
            self.stage2_adds += 1;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(pipe: &mut AccumPipeline, mode: PeMode, fill: impl Fn(usize, usize) -> i64) -> Packet {
        let mut lanes = pipe.buffer();
        for (lane, l) in lanes.iter_mut().enumerate() {
            for (pe, v) in l.iter_mut().enumerate() {
                *v = fill(lane, pe);
            }
        }
        Packet {
            mode,
            active: NUM_ARRAYS,
            lanes,
            tag: Tag::Conv { dest: [0; PE_COUNT] },
        }
    }

    #[test]
    fn conv_packet_sums_32_channels_with_latency_three() {
        let mut pipe = AccumPipeline::new();
        let p = packet(&mut pipe, PeMode::Conv, |lane, pe| (lane * 100 + pe) as i64);
        assert!(pipe.step(Some(p)).is_none());
        assert!(pipe.step(None).is_none());
        assert!(pipe.step(None).is_none());
        let out = pipe.step(None).expect("leaves after three stages");
        assert_eq!(out.active, 1);
        for pe in 0..PE_COUNT {
            let expect: i64 = (0..32).map(|lane| (lane * 100 + pe) as i64).sum();
            assert_eq!(out.lanes[0][pe], expect);
        }
        assert_eq!(pipe.stage1_adds, 4);
        assert_eq!(pipe.stage2_adds, 1);
        assert!(pipe.is_empty());
    }

    #[test]
    fn attention_packet_passes_through() {
        let mut pipe = AccumPipeline::new();
        let p = packet(&mut pipe, PeMode::Attention, |lane, pe| (lane * 36 + pe) as i64);
        pipe.step(Some(p));
        pipe.step(None);
        pipe.step(None);
        let out = pipe.step(None).unwrap();
        assert_eq!(out.active, NUM_ARRAYS);
        assert_eq!(out.lanes[31][35], 31 * 36 + 35);
        assert_eq!(pipe.stage1_adds + pipe.stage2_adds, 0);
    }
}
