//! Functional fixed-point pixel-attention network.
//!
//! Topology: a `head` convolution lifts the single luma channel to
//! `channels` features, `num_cpab` clamping pixel-attention blocks map
//! features, and a stride-2 transposed convolution reconstructs the ×2
//! image directly. Every layer output is clamped to ±255 and requantized to
//! the 18-bit activation format. There are no biases and no skip paths.
//!
//! This module ignores dataflow entirely; it is the golden reference the
//! cycle simulator must match bit for bit.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::qarith::{self, SaturationCounter, ACT_LIMIT_RAW};
use crate::{Error, Result};

/// Channel-major 3-D tensor of raw Q9.8 activations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<i32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty feature map");
        Self {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn from_raw(channels: usize, height: usize, width: usize, data: Vec<i32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape("feature map dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-channel map from 8-bit pixels, one pixel per unit of activation.
    pub fn from_pixels(height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        let data = pixels.iter().map(|&p| qarith::pixel_to_act(p)).collect();
        Self::from_raw(1, height, width, data)
    }

    /// First channel rounded to 8-bit pixels.
    pub fn to_pixels(&self) -> Vec<u8> {
        self.plane(0).iter().map(|&a| qarith::act_to_pixel(a)).collect()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> i32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: i32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[i32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [i32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies the window `[y, y + h) × [x, x + w)` of every channel.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> FeatureMap {
        assert!(y + h <= self.height && x + w <= self.width);
        let mut out = FeatureMap::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for r in 0..h {
                let src = &self.plane(c)[(y + r) * self.width + x..][..w];
                out.plane_mut(c)[r * w..][..w].copy_from_slice(src);
            }
        }
        out
    }

    /// Largest absolute activation, in raw units.
    pub fn max_abs_raw(&self) -> i32 {
        self.data.iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    /// Bytes occupied in a buffer packing each activation in `bits` bits.
    pub fn packed_bytes(&self, bits: u64) -> u64 {
        (self.data.len() as u64 * bits).div_ceil(8)
    }
}

/// Channel-major map of Q0.11 attention mask values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<u16>,
}

impl MaskMap {
    pub fn from_raw(channels: usize, height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != channels * height * width || channels * height * width == 0 {
            return Err(Error::Shape(format!(
                "{} mask values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        if data.iter().any(|&m| m > crate::MaskValue::RAW_MAX) {
            return Err(Error::Shape("mask value not below 1.0".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, raw: u16) -> Self {
        Self::from_raw(channels, height, width, vec![raw; channels * height * width])
            .expect("valid mask fill")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> u16 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    TransposeConv,
}

/// Quantized taps of one layer, laid out `[out][in][kh][kw]`, Q2.8 raw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerWeights {
    pub kind: LayerKind,
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub taps: Vec<i16>,
}

impl LayerWeights {
    pub fn new(
        kind: LayerKind,
        out_ch: usize,
        in_ch: usize,
        kernel_h: usize,
        kernel_w: usize,
        taps: Vec<i16>,
    ) -> Result<Self> {
        let n = out_ch * in_ch * kernel_h * kernel_w;
        if n == 0 || taps.len() != n {
            return Err(Error::Shape(format!(
                "{} taps for a {out_ch}x{in_ch}x{kernel_h}x{kernel_w} kernel",
                taps.len()
            )));
        }
        let fmt = crate::QFormat::WEIGHT;
        if let Some(t) = taps.iter().find(|&&t| !fmt.contains(i64::from(t))) {
            return Err(Error::Shape(format!("tap {t} does not fit {fmt}")));
        }
        Ok(Self {
            kind,
            out_ch,
            in_ch,
            kernel_h,
            kernel_w,
            taps,
        })
    }

    pub fn zeros(kind: LayerKind, out_ch: usize, in_ch: usize, k: usize) -> Self {
        Self::new(kind, out_ch, in_ch, k, k, vec![0; out_ch * in_ch * k * k]).expect("valid zero layer")
    }

    pub fn stride(&self) -> usize {
        match self.kind {
            LayerKind::Conv => 1,
            LayerKind::TransposeConv => 2,
        }
    }

    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    #[inline]
    pub fn tap(&self, o: usize, i: usize, ky: usize, kx: usize) -> i16 {
        self.taps[((o * self.in_ch + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// The `kh × kw` taps from output `o`, input `i`.
    pub fn kernel(&self, o: usize, i: usize) -> &[i16] {
        let n = self.kernel_h * self.kernel_w;
        &self.taps[(o * self.in_ch + i) * n..][..n]
    }
}

/// Network topology. Defaults reproduce the 25,920-parameter model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub channels: usize,
    pub num_cpab: usize,
    pub head_kernel: usize,
    pub cpab_pw_kernel: usize,
    pub cpab_sp_kernel: usize,
    pub tail_kernel: usize,
    pub scale: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            num_cpab: 2,
            head_kernel: 5,
            cpab_pw_kernel: 1,
            cpab_sp_kernel: 3,
            tail_kernel: 9,
            scale: 2,
        }
    }
}

impl ModelConfig {
    /// Checks the topology against what the fabric and the functional model support.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels > crate::pesim::NUM_ARRAYS {
            return Err(Error::Config(format!(
                "channels must be in 1..={}, got {}",
                crate::pesim::NUM_ARRAYS,
                self.channels
            )));
        }
        for (name, k) in [
            ("head_kernel", self.head_kernel),
            ("cpab_pw_kernel", self.cpab_pw_kernel),
            ("cpab_sp_kernel", self.cpab_sp_kernel),
        ] {
            if k % 2 == 0 || k > crate::pesim::PE_ROWS {
                return Err(Error::Config(format!("{name} must be odd and at most 5, got {k}")));
            }
        }
        if self.tail_kernel < 2 || self.tail_kernel.div_ceil(2) > crate::pesim::PE_ROWS {
            return Err(Error::Config(format!(
                "tail_kernel must be in 2..=12, got {}",
                self.tail_kernel
            )));
        }
        if self.scale != 2 {
            return Err(Error::Config(format!("only ×2 is supported, got ×{}", self.scale)));
        }
        Ok(())
    }

    /// `(name, kind, out, in, k)` for every layer in execution order.
    pub fn layer_shapes(&self) -> Vec<(String, LayerKind, usize, usize, usize)> {
        let c = self.channels;
        let mut shapes = vec![("head".to_string(), LayerKind::Conv, c, 1, self.head_kernel)];
        for b in 0..self.num_cpab {
            shapes.push((format!("cpab{b}.pw"), LayerKind::Conv, c, c, self.cpab_pw_kernel));
            shapes.push((format!("cpab{b}.mask"), LayerKind::Conv, c, c, 1));
            shapes.push((format!("cpab{b}.sp"), LayerKind::Conv, c, c, self.cpab_sp_kernel));
        }
        shapes.push(("tail".to_string(), LayerKind::TransposeConv, 1, c, self.tail_kernel));
        shapes
    }

    /// Radius, in input pixels, of the receptive field of the convolution
    /// stack before the tail.
    pub fn feature_radius(&self) -> usize {
        (self.head_kernel - 1) / 2 + self.num_cpab * ((self.cpab_pw_kernel - 1) / 2 + (self.cpab_sp_kernel - 1) / 2)
    }
}

/// Number of taps in the model. There are no biases.
pub fn param_count(config: &ModelConfig) -> usize {
    config
        .layer_shapes()
        .iter()
        .map(|(_, _, o, i, k)| o * i * k * k)
        .sum()
}

/// Weights of one clamping pixel-attention block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpabWeights {
    pub pw: LayerWeights,
    pub mask: LayerWeights,
    pub sp: LayerWeights,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub config: ModelConfig,
    pub head: LayerWeights,
    pub blocks: Vec<CpabWeights>,
    pub tail: LayerWeights,
}

impl Model {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(_, kind, o, i, k)| LayerWeights::zeros(kind, o, i, k))
            .collect();
        Self::from_layers(config, layers)
    }

    /// Assembles a model from layers in execution order, checking every shape.
    pub fn from_layers(config: ModelConfig, layers: Vec<LayerWeights>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for ((name, kind, o, i, k), l) in shapes.iter().zip(&layers) {
            if l.kind != *kind || l.out_ch != *o || l.in_ch != *i || l.kernel_h != *k || l.kernel_w != *k {
                return Err(Error::Shape(format!(
                    "layer {name}: expected {kind:?} {o}x{i}x{k}x{k}, got {:?} {}x{}x{}x{}",
                    l.kind, l.out_ch, l.in_ch, l.kernel_h, l.kernel_w
                )));
            }
        }
        let mut it = layers.into_iter();
        let head = it.next().expect("head");
        let blocks = (0..config.num_cpab)
            .map(|_| CpabWeights {
                pw: it.next().expect("pw"),
                mask: it.next().expect("mask"),
                sp: it.next().expect("sp"),
            })
            .collect();
        let tail = it.next().expect("tail");
        Ok(Self {
            config,
            head,
            blocks,
            tail,
        })
    }

    /// Layers in execution order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerWeights> {
        core::iter::once(&self.head)
            .chain(self.blocks.iter().flat_map(|b| [&b.pw, &b.mask, &b.sp]))
            .chain(core::iter::once(&self.tail))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(LayerWeights::tap_count).sum()
    }
}

fn check_conv(x: &FeatureMap, w: &LayerWeights, layer: &str) -> Result<()> {
    if w.kind != LayerKind::Conv {
        return Err(Error::Shape(format!("{layer}: expected a convolution layer")));
    }
    if x.channels != w.in_ch {
        return Err(Error::ChannelMismatch {
            layer: layer.into(),
            expected: w.in_ch,
            found: x.channels,
        });
    }
    if w.kernel_h.is_multiple_of(2) || w.kernel_w.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "{layer}: same padding needs an odd kernel, got {}x{}",
            w.kernel_h, w.kernel_w
        )));
    }
    Ok(())
}

/// Raw 40-bit sums of a stride-1 "same" convolution for output channel `o`.
fn conv_sums(x: &FeatureMap, w: &LayerWeights, o: usize, acc: &mut [i64]) {
    let (h, wd) = (x.height, x.width);
    let (ph, pw) = ((w.kernel_h - 1) / 2, (w.kernel_w - 1) / 2);
    acc.fill(0);
    for i in 0..w.in_ch {
        let plane = x.plane(i);
        let kernel = w.kernel(o, i);
        for ky in 0..w.kernel_h {
            // output rows y with 0 <= y + ky - ph < h
            let y_lo = ph.saturating_sub(ky);
            let y_hi = (h + ph).saturating_sub(ky).min(h);
            for kx in 0..w.kernel_w {
                let tap = i64::from(kernel[ky * w.kernel_w + kx]);
                if tap == 0 {
                    continue;
                }
                let x_lo = pw.saturating_sub(kx);
                let x_hi = (wd + pw).saturating_sub(kx).min(wd);
                if x_lo >= x_hi {
                    continue;
                }
                for y in y_lo..y_hi {
                    let src_row = (y + ky - ph) * wd;
                    let src = &plane[src_row + x_lo + kx - pw..src_row + x_hi + kx - pw];
                    let dst = &mut acc[y * wd + x_lo..y * wd + x_hi];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += tap * i64::from(s);
                    }
                }
            }
        }
    }
}

/// Zero-padded "same" convolution followed by clamp-to-±255.
pub fn conv2d(x: &FeatureMap, w: &LayerWeights) -> Result<FeatureMap> {
    conv2d_counted(x, w, &mut SaturationCounter::new())
}

/// [`conv2d`], counting accumulator saturations and clamp hits.
pub fn conv2d_counted(x: &FeatureMap, w: &LayerWeights, sat: &mut SaturationCounter) -> Result<FeatureMap> {
    check_conv(x, w, "conv2d")?;
    let mut out = FeatureMap::zeros(w.out_ch, x.height, x.width);
    let mut acc = vec![0i64; x.height * x.width];
    let frac = crate::QFormat::ACCUMULATOR.frac_bits();
    for o in 0..w.out_ch {
        conv_sums(x, w, o, &mut acc);
        for (dst, &a) in out.plane_mut(o).iter_mut().zip(&acc) {
            let a = qarith::saturate_acc(a, sat);
            *dst = finish_activation(a, frac, sat);
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn finish_activation(acc: i64, frac: u32, sat: &mut SaturationCounter) -> i32 {
    sat.record(acc.unsigned_abs() > (255u64 << frac));
    qarith::clamp255_raw(acc, frac)
}

/// Attention mask: sigmoid of the clamped 1×1 convolution.
pub fn attention_mask(x: &FeatureMap, w_mask: &LayerWeights) -> Result<MaskMap> {
    attention_mask_counted(x, w_mask, &mut SaturationCounter::new())
}

pub fn attention_mask_counted(
    x: &FeatureMap,
    w_mask: &LayerWeights,
    sat: &mut SaturationCounter,
) -> Result<MaskMap> {
    if w_mask.kernel_h != 1 || w_mask.kernel_w != 1 || w_mask.in_ch != w_mask.out_ch {
        return Err(Error::Shape("attention mask needs a square 1x1 convolution".into()));
    }
    let logits = conv2d_counted(x, w_mask, sat)?;
    let data = logits.data.iter().map(|&a| qarith::sigmoid_raw(a)).collect();
    MaskMap::from_raw(logits.channels, logits.height, logits.width, data)
}

/// Element-wise product of features and mask, rounded half up to Q9.8.
pub fn apply_mask(x: &FeatureMap, mask: &MaskMap) -> Result<FeatureMap> {
    if (x.channels, x.height, x.width) != (mask.channels, mask.height, mask.width) {
        return Err(Error::Shape(format!(
            "mask {}x{}x{} does not match features {}x{}x{}",
            mask.channels, mask.height, mask.width, x.channels, x.height, x.width
        )));
    }
    let data = x
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&a, &m)| qarith::attend_raw(a, m))
        .collect();
    FeatureMap::from_raw(x.channels, x.height, x.width, data)
}

/// `x ⊙ sigmoid(clamp(conv1x1(x)) / 256)`.
pub fn pixel_attention(x: &FeatureMap, w_mask: &LayerWeights) -> Result<FeatureMap> {
    pixel_attention_counted(x, w_mask, &mut SaturationCounter::new())
}

pub fn pixel_attention_counted(
    x: &FeatureMap,
    w_mask: &LayerWeights,
    sat: &mut SaturationCounter,
) -> Result<FeatureMap> {
    let mask = attention_mask_counted(x, w_mask, sat)?;
    apply_mask(x, &mask)
}

/// Clamping pixel-attention block: 3×3 conv of the attended 1×1 conv.
pub fn cpab_forward(x: &FeatureMap, w1: &LayerWeights, w_mask: &LayerWeights, w3: &LayerWeights) -> Result<FeatureMap> {
    cpab_forward_counted(x, w1, w_mask, w3, &mut SaturationCounter::new())
}

pub fn cpab_forward_counted(
    x: &FeatureMap,
    w1: &LayerWeights,
    w_mask: &LayerWeights,
    w3: &LayerWeights,
    sat: &mut SaturationCounter,
) -> Result<FeatureMap> {
    let y = conv2d_counted(x, w1, sat)?;
    let z = pixel_attention_counted(&y, w_mask, sat)?;
    conv2d_counted(&z, w3, sat)
}

/// Padding of the stride-2 transposed convolution that makes the output
/// exactly twice the input.
pub fn transpose_padding(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Stride-2 transposed convolution producing a `2H × 2W` map, then clamp.
pub fn transpose_conv2d(x: &FeatureMap, w: &LayerWeights) -> Result<FeatureMap> {
    transpose_conv2d_counted(x, w, &mut SaturationCounter::new())
}

pub fn transpose_conv2d_counted(x: &FeatureMap, w: &LayerWeights, sat: &mut SaturationCounter) -> Result<FeatureMap> {
    if w.kind != LayerKind::TransposeConv {
        return Err(Error::Shape("expected a transposed convolution layer".into()));
    }
    if x.channels != w.in_ch {
        return Err(Error::ChannelMismatch {
            layer: "transpose_conv2d".into(),
            expected: w.in_ch,
            found: x.channels,
        });
    }
    let (h, wd) = (x.height, x.width);
    let (oh, ow) = (2 * h, 2 * wd);
    let (py, px) = (transpose_padding(w.kernel_h), transpose_padding(w.kernel_w));
    let frac = crate::QFormat::ACCUMULATOR.frac_bits();
    let mut out = FeatureMap::zeros(w.out_ch, oh, ow);
    for o in 0..w.out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i64;
                // output oy receives input iy through tap ky when oy = 2*iy - py + ky
                for ky in ((oy + py) % 2..w.kernel_h).step_by(2) {
                    let Some(t) = (oy + py).checked_sub(ky) else { break };
                    let iy = t / 2;
                    if iy >= h {
                        continue;
                    }
                    for kx in ((ox + px) % 2..w.kernel_w).step_by(2) {
                        let Some(t) = (ox + px).checked_sub(kx) else { break };
                        let ix = t / 2;
                        if ix >= wd {
                            continue;
                        }
                        for i in 0..w.in_ch {
                            acc += i64::from(w.tap(o, i, ky, kx)) * i64::from(x.get(i, iy, ix));
                        }
                    }
                }
                let acc = qarith::saturate_acc(acc, sat);
                out.set(o, oy, ox, finish_activation(acc, frac, sat));
            }
        }
    }
    Ok(out)
}

/// Full network: 1×H×W luma in, 1×2H×2W out.
pub fn forward(x: &FeatureMap, model: &Model) -> Result<FeatureMap> {
    forward_counted(x, model, &mut SaturationCounter::new())
}

pub fn forward_counted(x: &FeatureMap, model: &Model, sat: &mut SaturationCounter) -> Result<FeatureMap> {
    if x.channels != 1 {
        return Err(Error::ChannelMismatch {
            layer: "head".into(),
            expected: 1,
            found: x.channels,
        });
    }
    let mut f = conv2d_counted(x, &model.head, sat)?;
    for b in &model.blocks {
        f = cpab_forward_counted(&f, &b.pw, &b.mask, &b.sp, sat)?;
    }
    let out = transpose_conv2d_counted(&f, &model.tail, sat)?;
    debug_assert!(out.max_abs_raw() <= ACT_LIMIT_RAW);
    Ok(out)
}
