//! Luma planes, colour conversion, bicubic resampling and PSNR.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImagingError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    Dimensions(usize, usize, usize, usize),
    #[error("shave {shave} leaves nothing of a {h}x{w} image")]
    Shave { shave: usize, h: usize, w: usize },
    #[error("{0} samples do not fill a {1}x{2} plane")]
    SampleCount(usize, usize, usize),
}

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePlane {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<u8>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, samples: Vec<u8>) -> Result<Self, ImagingError> {
        if samples.len() != height * width {
            return Err(ImagingError::SampleCount(samples.len(), height, width));
        }
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    pub fn filled(height: usize, width: usize, v: u8) -> Self {
        Self {
            height,
            width,
            samples: vec![v; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    /// Top-left `h × w` region.
    pub fn crop(&self, h: usize, w: usize) -> ImagePlane {
        let samples = (0..h).flat_map(|y| self.samples[y * self.width..][..w].iter().copied()).collect();
        ImagePlane {
            height: h,
            width: w,
            samples,
        }
    }

    /// Crops to a multiple of `scale` in both directions.
    pub fn modcrop(&self, scale: usize) -> ImagePlane {
        self.crop(self.height - self.height % scale, self.width - self.width % scale)
    }
}

/// Three 8-bit planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub r: ImagePlane,
    pub g: ImagePlane,
    pub b: ImagePlane,
}

impl RgbImage {
    /// From interleaved RGB samples.
    pub fn from_interleaved(height: usize, width: usize, rgb: &[u8]) -> Result<Self, ImagingError> {
        if rgb.len() != 3 * height * width {
            return Err(ImagingError::SampleCount(rgb.len() / 3, height, width));
        }
        let plane = |c: usize| ImagePlane {
            height,
            width,
            samples: rgb.iter().skip(c).step_by(3).copied().collect(),
        };
        Ok(Self {
            r: plane(0),
            g: plane(1),
            b: plane(2),
        })
    }

    pub fn to_interleaved(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * self.r.samples.len());
        for i in 0..self.r.samples.len() {
            out.extend([self.r.samples[i], self.g.samples[i], self.b.samples[i]]);
        }
        out
    }

    pub fn height(&self) -> usize {
        self.r.height
    }

    pub fn width(&self) -> usize {
        self.r.width
    }

    pub fn map_planes(&self, f: impl Fn(&ImagePlane) -> ImagePlane) -> RgbImage {
        RgbImage {
            r: f(&self.r),
            g: f(&self.g),
            b: f(&self.b),
        }
    }
}

fn same_dims(a: &ImagePlane, b: &ImagePlane) -> Result<(), ImagingError> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(ImagingError::Dimensions(a.height, a.width, b.height, b.width));
    }
    Ok(())
}

/// Studio-range BT.601 luma.
pub fn rgb_to_y(r: &ImagePlane, g: &ImagePlane, b: &ImagePlane) -> Result<ImagePlane, ImagingError> {
    same_dims(r, g)?;
    same_dims(r, b)?;
    let samples = r
        .samples
        .iter()
        .zip(&g.samples)
        .zip(&b.samples)
        .map(|((&r, &g), &b)| {
            let y = 16.0 + (65.481 * f64::from(r) + 128.553 * f64::from(g) + 24.966 * f64::from(b)) / 255.0;
            (y + 0.5).floor().clamp(16.0, 235.0) as u8
        })
        .collect();
    Ok(ImagePlane {
        height: r.height,
        width: r.width,
        samples,
    })
}

pub fn rgb_image_to_y(img: &RgbImage) -> ImagePlane {
    rgb_to_y(&img.r, &img.g, &img.b).expect("planes of one image share dimensions")
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Up2,
    Down2,
}

impl Scale {
    fn factor(self) -> f64 {
        match self {
            Scale::Up2 => 2.0,
            Scale::Down2 => 0.5,
        }
    }

    fn apply(self, n: usize) -> usize {
        match self {
            Scale::Up2 => 2 * n,
            Scale::Down2 => n.div_ceil(2),
        }
    }
}

/// Reflects an out-of-range index about the border, repeating the edge
/// sample (`-1 -> 0`, `n -> n - 1`).
fn mirror(j: i64, len: usize) -> usize {
    let period = 2 * len as i64;
    let m = j.rem_euclid(period);
    (if m < len as i64 { m } else { period - 1 - m }) as usize
}

/// Source indices and normalised weights for each output sample along one
/// axis. Downscaling widens the kernel by the inverse scale (antialiasing).
fn contributions(in_len: usize, out_len: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    let (kernel_scale, width) = if scale < 1.0 { (scale, 4.0 / scale) } else { (1.0, 4.0) };
    let taps = width.ceil() as i64 + 2;
    (0..out_len)
        .map(|i| {
            // centre of output sample i in input coordinates
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as i64;
            let mut w: Vec<(usize, f64)> = (0..taps)
                .map(|t| {
                    let j = left + t;
                    let v = kernel_scale * cubic(kernel_scale * (u - j as f64));
                    (mirror(j, in_len), v)
                })
                .filter(|&(_, v)| v != 0.0)
                .collect();
            let sum: f64 = w.iter().map(|(_, v)| v).sum();
            for (_, v) in &mut w {
                *v /= sum;
            }
            w
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Separable bicubic resize, heights first, rounding to 8 bits after each
/// pass. Samples beyond the border are mirrored.
pub fn bicubic_resize(img: &ImagePlane, scale: Scale) -> ImagePlane {
    let (h, w) = (img.height, img.width);
    let (oh, ow) = (scale.apply(h), scale.apply(w));
    let f = scale.factor();

    let rows = contributions(h, oh, f);
    let mut mid = vec![0u8; oh * w];
    for (y, c) in rows.iter().enumerate() {
        for x in 0..w {
            let v: f64 = c.iter().map(|&(j, k)| k * f64::from(img.samples[j * w + x])).sum();
            mid[y * w + x] = to_u8(v);
        }
    }

    let cols = contributions(w, ow, f);
    let mut out = vec![0u8; oh * ow];
    for y in 0..oh {
        let row = &mid[y * w..][..w];
        for (x, c) in cols.iter().enumerate() {
            let v: f64 = c.iter().map(|&(j, k)| k * f64::from(row[j])).sum();
            out[y * ow + x] = to_u8(v);
        }
    }
    ImagePlane {
        height: oh,
        width: ow,
        samples: out,
    }
}

/// Peak signal-to-noise ratio in dB over the region `shave` pixels inside
/// the border. Identical regions give `f64::INFINITY`.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, shave: usize) -> Result<f64, ImagingError> {
    same_dims(a, b)?;
    if 2 * shave >= a.height.min(a.width) {
        return Err(ImagingError::Shave {
            shave,
            h: a.height,
            w: a.width,
        });
    }
    let mut se = 0u64;
    let mut n = 0u64;
    for y in shave..a.height - shave {
        for x in shave..a.width - shave {
            let d = i64::from(a.get(y, x)) - i64::from(b.get(y, x));
            se += (d * d) as u64;
            n += 1;
        }
    }
    if se == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = se as f64 / n as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: u8) -> ImagePlane {
        ImagePlane::filled(3, 4, v)
    }

    #[test]
    fn luma_examples() {
        let y = |v| rgb_to_y(&gray(v), &gray(v), &gray(v)).unwrap().samples[0];
        assert_eq!(y(0), 16);
        assert_eq!(y(255), 235);
        assert_eq!(y(128), 126);
        assert!(rgb_to_y(&gray(1), &ImagePlane::filled(2, 4, 1), &gray(1)).is_err());
    }

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        for x in [1.0, -1.0, 2.0, -2.0, 2.5] {
            assert_eq!(cubic(x), 0.0);
        }
        assert_eq!(cubic(0.5), 0.5625);
        assert_eq!(cubic(1.5), -0.0625);
    }

    #[test]
    fn constant_plane_survives_both_directions() {
        let c = ImagePlane::filled(7, 5, 173);
        assert_eq!(bicubic_resize(&c, Scale::Up2), ImagePlane::filled(14, 10, 173));
        assert_eq!(bicubic_resize(&c, Scale::Down2), ImagePlane::filled(4, 3, 173));
    }

    #[test]
    fn impulse_upscale_shows_kernel_taps() {
        // a 1-D impulse of 200 in a row of zeros; upsampled positions sit a
        // quarter pixel off the input grid
        let mut s = vec![0u8; 9];
        s[4] = 200;
        let img = ImagePlane::new(1, 9, s).unwrap();
        let up = bicubic_resize(&img, Scale::Up2);
        let expect: Vec<u8> = (0..18)
            .map(|i| {
                let u = (i as f64 + 0.5) / 2.0 - 0.5;
                to_u8(200.0 * cubic(u - 4.0))
            })
            .collect();
        assert_eq!(up.samples[..18], expect[..]);
        // 200 * cubic(±0.25) = 173.4, 200 * cubic(±0.75) = 45.3, negative lobes clip
        assert_eq!(&up.samples[6..12], &[0, 45, 173, 173, 45, 0]);
    }

    #[test]
    fn borders_mirror_with_edge_repeat() {
        let idx: Vec<usize> = (-3..7).map(|j| mirror(j, 4)).collect();
        assert_eq!(idx, [2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(mirror(-2, 1), 0);
    }

    #[test]
    fn psnr_examples() {
        let a = ImagePlane::filled(8, 8, 0);
        let b = ImagePlane::filled(8, 8, 255);
        assert_eq!(psnr(&a, &a, 2).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &b, 2).unwrap(), 0.0);
        assert!(psnr(&a, &b, 4).is_err());
        assert!(psnr(&a, &ImagePlane::filled(8, 7, 0), 0).is_err());
    }

    #[test]
    fn modcrop_drops_remainders() {
        let p = ImagePlane::new(3, 5, (0..15).collect()).unwrap();
        let m = p.modcrop(2);
        assert_eq!((m.height, m.width), (2, 4));
        assert_eq!(m.samples, [0, 1, 2, 3, 5, 6, 7, 8]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn plane(max: usize) -> impl Strategy<Value = ImagePlane> {
            (1..=max, 1..=max).prop_flat_map(|(h, w)| {
                proptest::collection::vec(any::<u8>(), h * w)
                    .prop_map(move |s| ImagePlane::new(h, w, s).unwrap())
            })
        }

        proptest! {
            #[test]
            fn psnr_is_symmetric(a in plane(12), seed in any::<u64>()) {
                let b = ImagePlane::new(
                    a.height,
                    a.width,
                    a.samples.iter().enumerate().map(|(i, &v)| v ^ ((seed >> (i % 64)) as u8 & 7)).collect(),
                ).unwrap();
                let shave = a.height.min(a.width).saturating_sub(1) / 2;
                prop_assert_eq!(psnr(&a, &b, shave).unwrap(), psnr(&b, &a, shave).unwrap());
            }

            #[test]
            fn constant_planes_resize_to_themselves(v in any::<u8>(), h in 1usize..20, w in 1usize..20) {
                let p = ImagePlane::filled(h, w, v);
                for scale in [Scale::Up2, Scale::Down2] {
                    let r = bicubic_resize(&p, scale);
                    prop_assert!(r.samples.iter().all(|&s| s == v));
                }
            }

            #[test]
            fn luma_stays_in_studio_range(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
                let one = |v| ImagePlane::filled(1, 1, v);
                let y = rgb_to_y(&one(r), &one(g), &one(b)).unwrap().samples[0];
                prop_assert!((16..=235).contains(&y));
            }
        }
    }
}
