//! Whole-image runs of the network, functional or simulated.

use std::io::Write;

use bsra_core::hpan::{self, FeatureMap, Model};
use bsra_core::memmodel::{self, AccessKind, CapacityReport, DramLedger, SramBankSet};
use bsra_core::pesim::trace::TraceEvent;
use bsra_core::qarith::SaturationCounter;
use bsra_core::tiler::{self, TilePlan};
use bsra_core::{SimStats, Simulator};
use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::ImagePlane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Mode {
    Functional,
    Simulate,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Functional => "functional",
            Mode::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] bsra_core::Error),
    #[error("simulated output differs from the functional model at {mismatches} pixels")]
    Mismatch { mismatches: usize },
    #[error("trace: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSize {
    pub width: usize,
    pub height: usize,
}

impl Default for TileSize {
    fn default() -> Self {
        Self {
            width: tiler::DEFAULT_TILE_W,
            height: tiler::DEFAULT_TILE_H,
        }
    }
}

impl std::str::FromStr for TileSize {
    type Err = String;

    /// `WxH`, e.g. `40x48`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("tile `{s}` is not WxH"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("bad tile dimension `{v}`"))
        };
        Ok(Self {
            width: parse(w)?,
            height: parse(h)?,
        })
    }
}

pub struct RunOptions<'a> {
    pub mode: Mode,
    /// In simulate mode, also run the functional model and compare.
    pub verify: bool,
    pub tile: TileSize,
    pub banks: SramBankSet,
    /// Receives one `cycle,unit,op` line per event; forces tiles to run in
    /// order on one thread.
    pub trace: Option<&'a mut dyn Write>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            mode: Mode::Functional,
            verify: false,
            tile: TileSize::default(),
            banks: SramBankSet::default(),
            trace: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: ImagePlane,
    pub plan: TilePlan,
    pub ledger: DramLedger,
    pub capacity: CapacityReport,
    pub sim: Option<SimStats>,
    pub saturation_events: u64,
    /// `Some(true)` when a verified simulate run matched.
    pub verified: Option<bool>,
}

fn functional_tiles(tiles: &[FeatureMap], model: &Model) -> Result<Vec<(FeatureMap, u64)>, bsra_core::Error> {
    tiles
        .par_iter()
        .map(|t| {
            let mut sat = SaturationCounter::new();
            let out = hpan::forward_counted(t, model, &mut sat)?;
            Ok((out, sat.count()))
        })
        .collect()
}

fn simulated_tiles(
    tiles: &[FeatureMap],
    model: &Model,
    banks: SramBankSet,
    trace: Option<&mut dyn Write>,
) -> Result<Vec<(FeatureMap, SimStats)>, RunError> {
    let Some(w) = trace else {
        return Ok(tiles
            .par_iter()
            .map(|t| Simulator::with_banks(banks).simulate_model(t, model))
            .collect::<Result<_, _>>()?);
    };
    // one core running the tiles back to back
    let mut offset = 0u64;
    let mut io_err = None;
    let mut out = Vec::with_capacity(tiles.len());
    for t in tiles {
        let mut sink = |ev: TraceEvent| {
            if io_err.is_none() {
                let ev = TraceEvent {
                    cycle: ev.cycle + offset,
                    ..ev
                };
                if let Err(e) = writeln!(w, "{ev}") {
                    io_err = Some(e);
                }
            }
        };
        let r = Simulator::with_banks(banks).with_tracer(&mut sink).simulate_model(t, model)?;
        offset += r.1.cycles;
        out.push(r);
    }
    match io_err {
        Some(e) => Err(e.into()),
        None => Ok(out),
    }
}

/// Upscales a luma plane ×2 through block convolution.
pub fn upscale(input: &ImagePlane, model: &Model, opts: RunOptions) -> Result<RunOutcome, RunError> {
    let plan = tiler::split(input.height, input.width, opts.tile.height, opts.tile.width);
    let capacity = memmodel::plan_capacity_report(&model.config, &plan, &opts.banks);
    capacity.check()?;

    let fm = FeatureMap::from_pixels(input.height, input.width, &input.samples)?;
    let tiles = tiler::extract_tiles(&fm, &plan);
    let mut ledger = DramLedger::new();
    ledger.record(AccessKind::DramWeight, memmodel::weight_bytes(model.param_count() as u64));

    let (outputs, sim, saturation_events) = match opts.mode {
        Mode::Functional => {
            let r = functional_tiles(&tiles, model)?;
            let sat = r.iter().map(|(_, s)| s).sum();
            (r.into_iter().map(|(o, _)| o).collect::<Vec<_>>(), None, sat)
        }
        Mode::Simulate => {
            let r = simulated_tiles(&tiles, model, opts.banks, opts.trace)?;
            let mut stats = SimStats::default();
            for (_, s) in &r {
                stats.merge(s);
            }
            let sat = stats.saturation_events;
            (r.into_iter().map(|(o, _)| o).collect(), Some(stats), sat)
        }
    };
    for (t, o) in tiles.iter().zip(&outputs) {
        ledger.record(AccessKind::DramIn, tiler::tile_io_bytes(t));
        ledger.record(AccessKind::DramOut, tiler::tile_io_bytes(o));
    }

    let verified = if opts.verify && opts.mode == Mode::Simulate {
        let reference = functional_tiles(&tiles, model)?;
        let mismatches: usize = outputs
            .iter()
            .zip(&reference)
            .map(|(a, (b, _))| a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count())
            .sum();
        if mismatches > 0 {
            return Err(RunError::Mismatch { mismatches });
        }
        Some(true)
    } else {
        None
    };

    let stitched = tiler::stitch(outputs.into_iter().enumerate(), &plan, model.config.scale)?;
    ledger.check_io_only()?;
    let img = &stitched.image;
    let output = ImagePlane::new(img.height(), img.width(), img.to_pixels()).expect("stitched size");
    Ok(RunOutcome {
        output,
        plan,
        ledger,
        capacity,
        sim,
        saturation_events,
        verified,
    })
}
