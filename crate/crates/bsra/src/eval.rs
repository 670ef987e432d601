//! Dataset evaluation: downscale each HR image ×½, reconstruct ×2, and
//! compare luma with a 2-pixel shave.

use std::path::{Path, PathBuf};

use bsra_core::Model;
use rayon::prelude::*;

use crate::imageio::{self, Image, IMAGE_EXTENSIONS};
use crate::imaging::{bicubic_resize, psnr, rgb_image_to_y, ImagePlane, Scale};
use crate::pipeline::{self, Mode, RunOptions, RunOutcome, TileSize};

pub const SCALE: usize = 2;
pub const SHAVE: usize = 2;

#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Bicubic,
    Model { model: &'a Model, mode: Mode, tile: TileSize },
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bicubic => "bicubic",
            Method::Model { mode, .. } => mode.as_str(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub run: Option<RunOutcome>,
}

#[derive(Debug, Clone)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64
    }
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| anyhow::anyhow!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        anyhow::bail!("{}: no images", dir.display());
    }
    Ok(files)
}

/// PSNR of one HR image against its reconstruction. Colour images are
/// resampled per channel and compared on luma; the model sees the luma of
/// the downscaled image.
pub fn eval_image(hr: &Image, method: Method) -> anyhow::Result<(f64, Option<RunOutcome>)> {
    let down = |p: &ImagePlane| bicubic_resize(&p.modcrop(SCALE), Scale::Down2);
    let (hr_y, lr) = match hr {
        Image::Gray(p) => (p.modcrop(SCALE), Image::Gray(down(p))),
        Image::Rgb(c) => (rgb_image_to_y(&c.map_planes(|p| p.modcrop(SCALE))), Image::Rgb(c.map_planes(down))),
    };
    let (sr_y, run) = match method {
        Method::Bicubic => {
            let up = |p: &ImagePlane| bicubic_resize(p, Scale::Up2);
            let y = match &lr {
                Image::Gray(p) => up(p),
                Image::Rgb(c) => rgb_image_to_y(&c.map_planes(up)),
            };
            (y, None)
        }
        Method::Model { model, mode, tile } => {
            let run = pipeline::upscale(
                &lr.luma(),
                model,
                RunOptions {
                    mode,
                    tile,
                    ..Default::default()
                },
            )?;
            (run.output.clone(), Some(run))
        }
    };
    Ok((psnr(&hr_y, &sr_y, SHAVE)?, run))
}

pub fn eval_dir(dir: &Path, method: Method) -> anyhow::Result<EvalTable> {
    let files = list_images(dir)?;
    let rows = files
        .par_iter()
        .map(|path| {
            let img = imageio::read_image(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            let (psnr, run) = eval_image(&img, method)?;
            Ok(EvalRow {
                name: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                psnr,
                run,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(EvalTable { rows })
}
