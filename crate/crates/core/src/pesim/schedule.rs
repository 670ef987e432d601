//! The per-tile layer program: which jobs the core executes, in which order,
//! with which geometry. The simulator executes it; the memory model and the
//! analytic cycle model only read it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{NUM_ARRAYS, PE_COLS, PE_ROWS};
use crate::hpan::{transpose_padding, LayerWeights, ModelConfig};

/// Loop nesting of a convolution job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopOrder {
    /// Windows outermost, output channels innermost. Outputs retire band by
    /// band, so they can overwrite input columns in place.
    WindowMajor,
    /// Output channels outermost. Input stays resident for the whole job.
    ChannelMajor,
}

/// Geometry of one stride-1 convolution job on the PE fabric. Output size
/// equals input size; `pad_top`/`pad_left` zero rows/columns precede the
/// input and `kh - 1 - pad_top` / `kw - 1 - pad_left` follow it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub order: LoopOrder,
}

impl ConvGeometry {
    /// "Same" convolution with a centred odd kernel.
    pub fn same(in_ch: usize, out_ch: usize, height: usize, width: usize, k: usize, order: LoopOrder) -> Self {
        Self {
            in_ch,
            out_ch,
            height,
            width,
            kh: k,
            kw: k,
            pad_top: (k - 1) / 2,
            pad_left: (k - 1) / 2,
            order,
        }
    }

    pub fn fits_fabric(&self) -> bool {
        (1..=PE_ROWS).contains(&self.kh) && (1..=PE_COLS).contains(&self.kw)
    }

    pub fn padded_width(&self) -> usize {
        self.width + self.kw - 1
    }

    /// Output rows completed per 6-row window.
    pub fn strip_advance(&self) -> usize {
        PE_ROWS - self.kh + 1
    }

    pub fn channel_groups(&self) -> usize {
        self.in_ch.div_ceil(NUM_ARRAYS)
    }
}

/// Maps the taps of one output phase of a stride-2 transposed convolution
/// onto an ordinary convolution kernel.
///
/// Output `(2m + py, 2n + px)` reads input `(m - pad_top + r, n - pad_left + s)`
/// through original tap `(ky(r), kx(s))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseKernel {
    pub py: usize,
    pub px: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    kernel_h: usize,
    kernel_w: usize,
}

/// Number of taps, and the leading zero padding, of one phase along one axis.
fn phase_axis(kernel: usize, phase: usize) -> (usize, usize) {
    let p = transpose_padding(kernel);
    let first = (phase + p) % 2;
    let taps = (first..kernel).step_by(2).count();
    let last = first + 2 * (taps - 1);
    // input offset of tap t is (phase + p - t) / 2, smallest for the last tap
    let pad = (last - phase - p) / 2;
    (taps, pad)
}

impl PhaseKernel {
    pub fn new(kernel_h: usize, kernel_w: usize, py: usize, px: usize) -> Self {
        let (kh, pad_top) = phase_axis(kernel_h, py);
        let (kw, pad_left) = phase_axis(kernel_w, px);
        Self {
            py,
            px,
            kh,
            kw,
            pad_top,
            pad_left,
            kernel_h,
            kernel_w,
        }
    }

    /// All four phases in raster order.
    pub fn all(kernel_h: usize, kernel_w: usize) -> [PhaseKernel; 4] {
        [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(py, px)| PhaseKernel::new(kernel_h, kernel_w, py, px))
    }

    pub fn ky(&self, r: usize) -> usize {
        self.py + transpose_padding(self.kernel_h) + 2 * self.pad_top - 2 * r
    }

    pub fn kx(&self, s: usize) -> usize {
        self.px + transpose_padding(self.kernel_w) + 2 * self.pad_left - 2 * s
    }
}

/// Source of kernel taps for a convolution job.
#[derive(Debug, Clone, Copy)]
pub enum KernelRef<'a> {
    Direct(&'a LayerWeights),
    Phase(&'a LayerWeights, PhaseKernel),
}

impl KernelRef<'_> {
    #[inline]
    pub fn tap(&self, o: usize, i: usize, r: usize, s: usize) -> i16 {
        match self {
            KernelRef::Direct(w) => w.tap(o, i, r, s),
            KernelRef::Phase(w, ph) => w.tap(o, i, ph.ky(r), ph.kx(s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    Conv(ConvGeometry),
    /// 1×1 mask convolution fused with the distributed-mask multiply,
    /// window by window, in place.
    Attention {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// One phase of the stride-2 tail, written into a `2H × 2W` map that
    /// lives alongside the retained input.
    TransposePhase(ConvGeometry, PhaseKernel),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub name: String,
    pub kind: StepKind,
}

/// The program the core runs for one `height × width` tile.
pub fn program(config: &ModelConfig, height: usize, width: usize) -> Vec<Step> {
    let c = config.channels;
    let mut steps = Vec::new();
    steps.push(Step {
        name: "head".into(),
        kind: StepKind::Conv(ConvGeometry::same(1, c, height, width, config.head_kernel, LoopOrder::ChannelMajor)),
    });
    for b in 0..config.num_cpab {
        steps.push(Step {
            name: format!("cpab{b}.pw"),
            kind: StepKind::Conv(ConvGeometry::same(
                c,
                c,
                height,
                width,
                config.cpab_pw_kernel,
                LoopOrder::WindowMajor,
            )),
        });
        steps.push(Step {
            name: format!("cpab{b}.attn"),
            kind: StepKind::Attention {
                channels: c,
                height,
                width,
            },
        });
        steps.push(Step {
            name: format!("cpab{b}.sp"),
            kind: StepKind::Conv(ConvGeometry::same(
                c,
                c,
                height,
                width,
                config.cpab_sp_kernel,
                LoopOrder::WindowMajor,
            )),
        });
    }
    for ph in PhaseKernel::all(config.tail_kernel, config.tail_kernel) {
        steps.push(Step {
            name: format!("tail.p{}{}", ph.py, ph.px),
            kind: StepKind::TransposePhase(phase_geometry(c, height, width, ph), ph),
        });
    }
    steps
}

pub fn phase_geometry(in_ch: usize, height: usize, width: usize, ph: PhaseKernel) -> ConvGeometry {
    ConvGeometry {
        in_ch,
        out_ch: 1,
        height,
        width,
        kh: ph.kh,
        kw: ph.kw,
        pad_top: ph.pad_top,
        pad_left: ph.pad_left,
        order: LoopOrder::ChannelMajor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_tap_tail_splits_into_five_and_four() {
        let [p00, p01, p10, p11] = PhaseKernel::all(9, 9);
        assert_eq!((p00.kh, p00.kw), (5, 5));
        assert_eq!((p01.kh, p01.kw), (5, 4));
        assert_eq!((p10.kh, p10.kw), (4, 5));
        assert_eq!((p11.kh, p11.kw), (4, 4));
        assert_eq!((p00.pad_top, p11.pad_top), (2, 1));
        assert_eq!((0..5).map(|r| p00.ky(r)).collect::<Vec<_>>(), [8, 6, 4, 2, 0]);
        assert_eq!((0..4).map(|r| p11.ky(r)).collect::<Vec<_>>(), [7, 5, 3, 1]);
    }

    #[test]
    fn phases_cover_every_tap_once() {
        for k in 2..=12 {
            let mut hits = alloc::vec![0u32; k];
            for py in 0..2 {
                let ph = PhaseKernel::new(k, k, py, 0);
                assert!(ph.kh <= PE_ROWS);
                for r in 0..ph.kh {
                    hits[ph.ky(r)] += 1;
                }
            }
            assert!(hits.iter().all(|&h| h == 1), "kernel {k}: {hits:?}");
        }
    }

    #[test]
    fn default_program_shape() {
        let steps = program(&ModelConfig::default(), 48, 40);
        let names: Vec<_> = steps.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "head", "cpab0.pw", "cpab0.attn", "cpab0.sp", "cpab1.pw", "cpab1.attn", "cpab1.sp", "tail.p00",
                "tail.p01", "tail.p10", "tail.p11"
            ]
        );
    }
}
