//! Block convolution over the whole model.
//!
//! The input is split into non-overlapping tiles; each tile runs through
//! every layer on its own with zero padding at its edges, and the ×2 outputs
//! are placed side by side. No halo is exchanged, so pixels whose receptive
//! field crosses an internal tile edge differ from an untiled run.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::hpan::{self, FeatureMap, Model, ModelConfig};
use crate::memmodel::{AccessKind, DramLedger};
use crate::{Error, Result};

pub const DEFAULT_TILE_W: usize = 40;
pub const DEFAULT_TILE_H: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileRect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl TileRect {
    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

/// Row-major grid of tiles covering an image exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub image_h: usize,
    pub image_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<TileRect>,
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    /// Index of the tile containing input pixel `(y, x)`.
    pub fn tile_of(&self, y: usize, x: usize) -> usize {
        (y / self.tile_h) * self.cols + x / self.tile_w
    }
}

/// Splits an `h × w` image into `tile_h × tile_w` tiles; the last row and
/// column carry the remainder.
pub fn split(h: usize, w: usize, tile_h: usize, tile_w: usize) -> TilePlan {
    assert!(h > 0 && w > 0, "image must be non-empty");
    assert!(tile_h > 0 && tile_w > 0, "tile must be non-empty");
    let rows = h.div_ceil(tile_h);
    let cols = w.div_ceil(tile_w);
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r * tile_h, c * tile_w);
            tiles.push(TileRect {
                y,
                x,
                h: tile_h.min(h - y),
                w: tile_w.min(w - x),
            });
        }
    }
    TilePlan {
        image_h: h,
        image_w: w,
        tile_h,
        tile_w,
        rows,
        cols,
        tiles,
    }
}

/// Split with the default 40-wide, 48-tall tiles.
pub fn split_default(h: usize, w: usize) -> TilePlan {
    split(h, w, DEFAULT_TILE_H, DEFAULT_TILE_W)
}

/// Runs the whole network on one tile in isolation.
pub fn fused_forward(tile: &FeatureMap, model: &Model) -> Result<FeatureMap> {
    hpan::forward(tile, model)
}

/// Stitched image plus, for each output pixel, the tile that wrote it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StitchedOutput {
    pub image: FeatureMap,
    pub provenance: Vec<u32>,
}

/// Places each tile output at `scale ×` its tile origin.
pub fn stitch<I>(outputs: I, plan: &TilePlan, scale: usize) -> Result<StitchedOutput>
where
    I: IntoIterator<Item = (usize, FeatureMap)>,
{
    let (oh, ow) = (plan.image_h * scale, plan.image_w * scale);
    let mut image: Option<FeatureMap> = None;
    let mut provenance = vec![u32::MAX; oh * ow];
    let mut seen = vec![false; plan.tiles.len()];
    for (idx, out) in outputs {
        let rect = plan
            .tiles
            .get(idx)
            .ok_or_else(|| Error::Integrity(format!("tile {idx} is not in the plan")))?;
        if core::mem::replace(&mut seen[idx], true) {
            return Err(Error::Integrity(format!("tile {idx} delivered twice")));
        }
        if out.height() != rect.h * scale || out.width() != rect.w * scale {
            return Err(Error::Integrity(format!(
                "tile {idx} output is {}x{}, expected {}x{}",
                out.height(),
                out.width(),
                rect.h * scale,
                rect.w * scale
            )));
        }
        let img = image.get_or_insert_with(|| FeatureMap::zeros(out.channels(), oh, ow));
        if img.channels() != out.channels() {
            return Err(Error::Integrity(format!("tile {idx} has {} channels", out.channels())));
        }
        let (y0, x0) = (rect.y * scale, rect.x * scale);
        for c in 0..out.channels() {
            for r in 0..out.height() {
                let src = &out.plane(c)[r * out.width()..][..out.width()];
                img.plane_mut(c)[(y0 + r) * ow + x0..][..out.width()].copy_from_slice(src);
            }
        }
        for r in 0..out.height() {
            provenance[(y0 + r) * ow + x0..][..out.width()].fill(idx as u32);
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Integrity(format!("tile {missing} missing")));
    }
    Ok(StitchedOutput {
        image: image.expect("plans have at least one tile"),
        provenance,
    })
}

/// Cuts the tiles of `plan` out of `input`.
pub fn extract_tiles(input: &FeatureMap, plan: &TilePlan) -> Vec<FeatureMap> {
    plan.tiles.iter().map(|t| input.crop(t.y, t.x, t.h, t.w)).collect()
}

/// Block-convolution run of the functional model over a whole image,
/// recording external traffic: input pixels in, output pixels out. Weights
/// are the caller's to record, once per model load.
pub fn block_forward(input: &FeatureMap, model: &Model, plan: &TilePlan, ledger: &mut DramLedger) -> Result<StitchedOutput> {
    let scale = model.config.scale;
    let mut outputs = Vec::with_capacity(plan.tile_count());
    for (idx, tile) in extract_tiles(input, plan).into_iter().enumerate() {
        ledger.record(AccessKind::DramIn, tile_io_bytes(&tile));
        let out = fused_forward(&tile, model)?;
        ledger.record(AccessKind::DramOut, tile_io_bytes(&out));
        outputs.push((idx, out));
    }
    stitch(outputs, plan, scale)
}

/// External bytes for moving a tile image: one 8-bit pixel per sample.
pub fn tile_io_bytes(tile: &FeatureMap) -> u64 {
    (tile.height() * tile.width()) as u64
}

/// Inclusive range of input coordinates (along one axis) that can influence
/// output coordinate `o`, before clipping to the image.
pub fn receptive_range(config: &ModelConfig, o: usize) -> (i64, i64) {
    let k = config.tail_kernel as i64;
    let p = hpan::transpose_padding(config.tail_kernel) as i64;
    let o = o as i64;
    // o = 2*i - p + t for tap t in [0, k)
    let lo = (o + p - (k - 1)).div_euclid(2) + i64::from((o + p - (k - 1)).rem_euclid(2) != 0);
    let hi = (o + p).div_euclid(2);
    let r = config.feature_radius() as i64;
    (lo - r, hi + r)
}

/// Marks output pixels whose receptive field, clipped to the image, leaves
/// the tile that produced them. Everything outside the band must match an
/// untiled run exactly.
pub fn boundary_band(plan: &TilePlan, config: &ModelConfig) -> Vec<bool> {
    let scale = config.scale;
    let (oh, ow) = (plan.image_h * scale, plan.image_w * scale);
    let inside = |o: usize, start: usize, len: usize, extent: usize| {
        let (lo, hi) = receptive_range(config, o);
        let lo = lo.max(0);
        let hi = hi.min(extent as i64 - 1);
        lo >= start as i64 && hi < (start + len) as i64
    };
    let mut band = vec![false; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let t = &plan.tiles[plan.tile_of(oy / scale, ox / scale)];
            let ok = inside(oy, t.y, t.h, plan.image_h) && inside(ox, t.x, t.w, plan.image_w);
            band[oy * ow + ox] = !ok;
        }
    }
    band
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let p = split(96, 80, 48, 40);
        assert_eq!((p.rows, p.cols), (2, 2));
        assert!(p.tiles.iter().all(|t| t.h == 48 && t.w == 40));

        let p = split(100, 90, 48, 40);
        assert_eq!((p.rows, p.cols), (3, 3));
        assert_eq!(p.tiles.last().unwrap().h, 4);
        assert_eq!(p.tiles.last().unwrap().w, 10);

        let p = split_default(540, 960);
        assert_eq!((p.rows, p.cols), (12, 24));
        assert_eq!(p.tiles.last().unwrap().h, 12);
        assert_eq!(p.tiles.last().unwrap().w, 40);
    }

    #[test]
    fn identity_stitch_round_trip() {
        let data: Vec<i32> = (0..2 * 100 * 90).map(|v| v * 7 - 3000).collect();
        let img = FeatureMap::from_raw(2, 100, 90, data).unwrap();
        let plan = split(100, 90, 48, 40);
        let tiles = extract_tiles(&img, &plan);
        let out = stitch(tiles.into_iter().enumerate(), &plan, 1).unwrap();
        assert_eq!(out.image, img);
    }

    #[test]
    fn stitch_shape_and_provenance() {
        let plan = split(96, 80, 48, 40);
        let outs = (0..4).map(|i| (i, FeatureMap::zeros(1, 96, 80)));
        let out = stitch(outs, &plan, 2).unwrap();
        assert_eq!((out.image.height(), out.image.width()), (192, 160));
        let mut counts = [0usize; 4];
        for &p in &out.provenance {
            counts[p as usize] += 1;
        }
        assert_eq!(counts, [96 * 80; 4]);
        assert_eq!(out.provenance[0], 0);
        assert_eq!(out.provenance[192 * 160 - 1], 3);
    }

    #[test]
    fn stitch_detects_missing_and_duplicate_tiles() {
        let plan = split(96, 80, 48, 40);
        let outs = (0..3).map(|i| (i, FeatureMap::zeros(1, 96, 80)));
        assert!(matches!(stitch(outs, &plan, 2), Err(Error::Integrity(_))));
        let outs = [0, 1, 1, 3].map(|i| (i, FeatureMap::zeros(1, 96, 80)));
        assert!(matches!(stitch(outs, &plan, 2), Err(Error::Integrity(_))));
        let outs = (0..4).map(|i| (i, FeatureMap::zeros(1, 48, 40)));
        assert!(matches!(stitch(outs, &plan, 2), Err(Error::Integrity(_))));
    }

    #[test]
    fn receptive_range_of_default_model() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.feature_radius(), 4);
        // output 0 sees feature rows -2..=2, widened by the 4-pixel stack radius
        assert_eq!(receptive_range(&cfg, 0), (-6, 6));
        assert_eq!(receptive_range(&cfg, 1), (-5, 6));
        assert_eq!(receptive_range(&cfg, 2), (-5, 7));
    }

    #[test]
    fn single_tile_band_is_empty() {
        let plan = split(20, 16, 48, 40);
        assert!(boundary_band(&plan, &ModelConfig::default()).iter().all(|b| !b));
    }
}
