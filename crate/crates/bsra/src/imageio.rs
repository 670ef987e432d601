//! Image files: binary netpbm (P5 grey, P6 colour) read and written here,
//! PNG and BMP decoded through the `image` crate.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::imaging::{rgb_image_to_y, ImagePlane, RgbImage};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("netpbm: {0}")]
    Netpbm(String),
    #[error("decode: {0}")]
    Decode(#[from] image::ImageError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Image {
    Gray(ImagePlane),
    Rgb(RgbImage),
}

impl Image {
    pub fn height(&self) -> usize {
        match self {
            Image::Gray(p) => p.height,
            Image::Rgb(c) => c.height(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Image::Gray(p) => p.width,
            Image::Rgb(c) => c.width(),
        }
    }

    /// The luma plane; grey images are taken as luma already.
    pub fn luma(&self) -> ImagePlane {
        match self {
            Image::Gray(p) => p.clone(),
            Image::Rgb(c) => rgb_image_to_y(c),
        }
    }
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        loop {
            match self.rest.first() {
                Some(b) if b.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self.rest.iter().position(|&b| b == b'\n').unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageIoError> {
        self.skip_space_and_comments();
        let len = self.rest.iter().take_while(|b| b.is_ascii_digit()).count();
        if len == 0 {
            return Err(ImageIoError::Netpbm(format!("missing {what}")));
        }
        let s = std::str::from_utf8(&self.rest[..len]).expect("ascii digits");
        self.rest = &self.rest[len..];
        s.parse()
            .map_err(|_| ImageIoError::Netpbm(format!("{what} out of range")))
    }
}

/// Parses a binary P5 or P6 file with maxval 255.
pub fn parse_netpbm(bytes: &[u8]) -> Result<Image, ImageIoError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(ImageIoError::Netpbm("not a binary P5/P6 file".into())),
    };
    let mut h = Header { rest: &bytes[2..] };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(ImageIoError::Netpbm(format!("maxval {maxval}, only 255 is supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    match h.rest.first() {
        Some(b) if b.is_ascii_whitespace() => h.rest = &h.rest[1..],
        _ => return Err(ImageIoError::Netpbm("no whitespace after maxval".into())),
    }
    let need = width * height * channels;
    if h.rest.len() < need {
        return Err(ImageIoError::Netpbm(format!(
            "raster has {} bytes, {width}x{height} needs {need}",
            h.rest.len()
        )));
    }
    let raster = &h.rest[..need];
    Ok(if channels == 1 {
        Image::Gray(ImagePlane::new(height, width, raster.to_vec()).expect("sized above"))
    } else {
        Image::Rgb(RgbImage::from_interleaved(height, width, raster).expect("sized above"))
    })
}

pub fn encode_netpbm(img: &Image) -> Vec<u8> {
    let (magic, raster) = match img {
        Image::Gray(p) => ("P5", p.samples.clone()),
        Image::Rgb(c) => ("P6", c.to_interleaved()),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&raster);
    out
}

/// Reads P5/P6 directly and anything else the `image` crate recognises.
pub fn decode(bytes: &[u8]) -> Result<Image, ImageIoError> {
    if matches!(bytes.get(..2), Some(b"P5" | b"P6")) {
        return parse_netpbm(bytes);
    }
    let dynimg = image::load_from_memory(bytes)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    Ok(if dynimg.color().has_color() {
        let rgb = dynimg.to_rgb8();
        Image::Rgb(RgbImage::from_interleaved(h, w, rgb.as_raw()).expect("decoder output is complete"))
    } else {
        let l = dynimg.to_luma8();
        Image::Gray(ImagePlane::new(h, w, l.into_raw()).expect("decoder output is complete"))
    })
}

pub fn read_image(path: &Path) -> Result<Image, ImageIoError> {
    decode(&fs::read(path)?)
}

pub fn write_netpbm(path: &Path, img: &Image) -> Result<(), ImageIoError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_netpbm(img))?;
    Ok(())
}

/// File extensions accepted when scanning a dataset directory.
pub const IMAGE_EXTENSIONS: [&str; 5] = ["pgm", "ppm", "pnm", "png", "bmp"];
