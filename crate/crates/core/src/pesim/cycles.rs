//! Closed-form cycle counts, computed from the layer program alone.

use alloc::string::String;
use alloc::vec::Vec;

use super::accum::AccumPipeline;
use super::schedule::{self, ConvGeometry, Step, StepKind};
use super::{NUM_ARRAYS, PE_COLS, PE_ROWS};
use crate::hpan::ModelConfig;
use crate::tiler;

pub const CLOCK_HZ: u64 = 471_000_000;
pub const TARGET_FPS: u64 = 30;

/// Cycles available per frame at the target clock and frame rate.
pub const fn frame_budget_cycles(clock_hz: u64, fps: u64) -> u64 {
    clock_hz / fps
}

/// Vertical strips over one column of windows.
pub fn strips(g: &ConvGeometry) -> u64 {
    g.height.div_ceil(g.strip_advance()) as u64
}

/// Windows across the padded width.
pub fn window_columns(g: &ConvGeometry) -> u64 {
    g.padded_width().div_ceil(PE_COLS) as u64
}

/// Each window, channel group and output channel costs `kh · kw` cycles; the
/// pipeline drains once at the end.
pub fn conv_cycles(g: &ConvGeometry) -> u64 {
    let groups = g.in_ch.div_ceil(NUM_ARRAYS) as u64;
    groups * window_columns(g) * strips(g) * g.out_ch as u64 * (g.kh * g.kw) as u64 + AccumPipeline::DEPTH
}

fn windows(height: usize, width: usize) -> u64 {
    (height.div_ceil(PE_ROWS) * width.div_ceil(PE_COLS)) as u64
}

/// Mask convolution, drain and multiply per window.
pub fn attention_block_cycles(channels: usize, height: usize, width: usize) -> u64 {
    windows(height, width) * (channels as u64 + AccumPipeline::DEPTH + 1) + AccumPipeline::DEPTH
}

/// Multiply with precomputed masks: one cycle per window and channel group.
pub fn attention_cycles(channels: usize, height: usize, width: usize) -> u64 {
    windows(height, width) * channels.div_ceil(NUM_ARRAYS) as u64 + AccumPipeline::DEPTH
}

pub fn step_cycles(step: &Step) -> u64 {
    match step.kind {
        StepKind::Conv(g) | StepKind::TransposePhase(g, _) => conv_cycles(&g),
        StepKind::Attention {
            channels,
            height,
            width,
        } => attention_block_cycles(channels, height, width),
    }
}

/// Per-step and total cycles of one tile.
pub fn tile_breakdown(config: &ModelConfig, height: usize, width: usize) -> Vec<(String, u64)> {
    schedule::program(config, height, width)
        .iter()
        .map(|s| (s.name.clone(), step_cycles(s)))
        .collect()
}

pub fn tile_cycles(config: &ModelConfig, height: usize, width: usize) -> u64 {
    tile_breakdown(config, height, width).iter().map(|(_, c)| c).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub frame_h: usize,
    pub frame_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub tiles: usize,
    pub cycles_per_tile: u64,
    /// Full-tile cycles times tile count.
    pub extrapolated_cycles: u64,
    /// Sum over the actual plan, with smaller edge tiles.
    pub planned_cycles: u64,
    pub budget_cycles: u64,
}

impl BudgetReport {
    pub fn ratio(&self) -> f64 {
        self.extrapolated_cycles as f64 / self.budget_cycles as f64
    }

    pub fn meets_budget(&self) -> bool {
        self.extrapolated_cycles <= self.budget_cycles
    }

    /// Frames per second at `clock_hz` for the extrapolated count.
    pub fn fps(&self, clock_hz: u64) -> f64 {
        clock_hz as f64 / self.extrapolated_cycles as f64
    }
}

/// Cycles for one `frame_h × frame_w` input frame against the real-time
/// budget.
pub fn frame_budget(
    config: &ModelConfig,
    frame_h: usize,
    frame_w: usize,
    tile_h: usize,
    tile_w: usize,
    budget_cycles: u64,
) -> BudgetReport {
    let plan = tiler::split(frame_h, frame_w, tile_h, tile_w);
    let cycles_per_tile = tile_cycles(config, tile_h, tile_w);
    let mut planned = 0;
    let mut memo: Vec<((usize, usize), u64)> = Vec::new();
    for t in &plan.tiles {
        let key = (t.h, t.w);
        let c = match memo.iter().find(|(k, _)| *k == key) {
            Some(&(_, c)) => c,
            None => {
                let c = tile_cycles(config, t.h, t.w);
                memo.push((key, c));
                c
            }
        };
        planned += c;
    }
    BudgetReport {
        frame_h,
        frame_w,
        tile_h,
        tile_w,
        tiles: plan.tile_count(),
        cycles_per_tile,
        extrapolated_cycles: cycles_per_tile * plan.tile_count() as u64,
        planned_cycles: planned,
        budget_cycles,
    }
}

/// FHD output (960×540 input) at 471 MHz and 30 frames per second.
pub fn fhd_budget(config: &ModelConfig, tile_h: usize, tile_w: usize) -> BudgetReport {
    frame_budget(config, 540, 960, tile_h, tile_w, frame_budget_cycles(CLOCK_HZ, TARGET_FPS))
}
