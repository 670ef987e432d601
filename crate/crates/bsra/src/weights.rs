//! Weight files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "BSRA"  u16 version
//! u16 channels, num_cpab, head_kernel, cpab_pw_kernel, cpab_sp_kernel, tail_kernel, scale
//! u8 int_bits, u8 frac_bits   for weights, activations, accumulator
//! u16 layer count, then per layer: u8 kind (0 conv, 1 transposed), u16 out, in, kh, kw
//! i16 taps, layers in execution order, each [out][in][kh][kw]
//! ```
//!
//! Float weights for `quantize` are JSON: `{"layers": [{"name", "shape":
//! [out, in, kh, kw], "data": [...]}]}` in the same order.

use bsra_core::hpan::{LayerKind, LayerWeights, Model, ModelConfig};
use bsra_core::qarith::{self, QFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"BSRA";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("not a weight file (bad magic)")]
    Magic,
    #[error("unsupported weight file version {0}")]
    Version(u16),
    #[error("file ends early: {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the payload")]
    Trailing(usize),
    #[error("Q-format {found} in file, expected {expected}")]
    Format { expected: QFormat, found: QFormat },
    #[error("layer {layer}: {msg}")]
    Layer { layer: String, msg: String },
    #[error(transparent)]
    Model(#[from] bsra_core::Error),
    #[error("float weights: {0}")]
    Json(#[from] serde_json::Error),
}

struct Reader<'a> {
    b: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&[u8], WeightError> {
        if self.b.len() < n {
            return Err(WeightError::Truncated(what));
        }
        let (head, tail) = self.b.split_at(n);
        self.b = tail;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WeightError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, WeightError> {
        let s = self.take(2, what)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }
}

const FORMATS: [QFormat; 3] = [QFormat::WEIGHT, QFormat::ACTIVATION, QFormat::ACCUMULATOR];

fn config_fields(c: &ModelConfig) -> [usize; 7] {
    [
        c.channels,
        c.num_cpab,
        c.head_kernel,
        c.cpab_pw_kernel,
        c.cpab_sp_kernel,
        c.tail_kernel,
        c.scale,
    ]
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    for v in config_fields(&model.config) {
        out.extend((v as u16).to_le_bytes());
    }
    for f in FORMATS {
        out.extend([f.int_bits() as u8, f.frac_bits() as u8]);
    }
    let layers: Vec<&LayerWeights> = model.layers().collect();
    out.extend((layers.len() as u16).to_le_bytes());
    for l in &layers {
        out.push(match l.kind {
            LayerKind::Conv => 0,
            LayerKind::TransposeConv => 1,
        });
        for v in [l.out_ch, l.in_ch, l.kernel_h, l.kernel_w] {
            out.extend((v as u16).to_le_bytes());
        }
    }
    for l in &layers {
        for t in &l.taps {
            out.extend(t.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Model, WeightError> {
    let mut r = Reader { b: bytes };
    if r.take(4, "magic")? != MAGIC {
        return Err(WeightError::Magic);
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(WeightError::Version(version));
    }
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = usize::from(r.u16("config")?);
    }
    let config = ModelConfig {
        channels: f[0],
        num_cpab: f[1],
        head_kernel: f[2],
        cpab_pw_kernel: f[3],
        cpab_sp_kernel: f[4],
        tail_kernel: f[5],
        scale: f[6],
    };
    config.validate()?;
    for expected in FORMATS {
        let found = QFormat::new(r.u8("q-format")?, r.u8("q-format")?);
        if found != expected {
            return Err(WeightError::Format { expected, found });
        }
    }
    let shapes = config.layer_shapes();
    let count = usize::from(r.u16("layer count")?);
    if count != shapes.len() {
        return Err(WeightError::Layer {
            layer: "(table)".into(),
            msg: format!("{count} layers, the configuration has {}", shapes.len()),
        });
    }
    let mut table = Vec::with_capacity(count);
    for (name, kind, o, i, k) in &shapes {
        let found_kind = match r.u8("layer kind")? {
            0 => LayerKind::Conv,
            1 => LayerKind::TransposeConv,
            x => {
                return Err(WeightError::Layer {
                    layer: name.clone(),
                    msg: format!("unknown kind {x}"),
                })
            }
        };
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = usize::from(r.u16("layer shape")?);
        }
        if found_kind != *kind || dims != [*o, *i, *k, *k] {
            return Err(WeightError::Layer {
                layer: name.clone(),
                msg: format!("shape {found_kind:?} {dims:?}, expected {kind:?} {:?}", [o, i, k, k]),
            });
        }
        table.push((name, found_kind, dims));
    }
    let mut layers = Vec::with_capacity(count);
    for (name, kind, [o, i, kh, kw]) in table {
        let raw = r.take(2 * o * i * kh * kw, "taps")?;
        let taps = raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
        let l = LayerWeights::new(kind, o, i, kh, kw, taps).map_err(|e| WeightError::Layer {
            layer: name.clone(),
            msg: e.to_string(),
        })?;
        layers.push(l);
    }
    if !r.b.is_empty() {
        return Err(WeightError::Trailing(r.b.len()));
    }
    Ok(Model::from_layers(config, layers)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLayer {
    pub name: String,
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatWeights {
    pub layers: Vec<FloatLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantReport {
    pub layer: String,
    pub taps: usize,
    pub max_abs_error: f64,
    pub saturated: u64,
}

/// Quantizes float weights for the default topology.
pub fn quantize(floats: &FloatWeights) -> Result<(Model, Vec<QuantReport>), WeightError> {
    let config = ModelConfig::default();
    let shapes = config.layer_shapes();
    if floats.layers.len() != shapes.len() {
        return Err(WeightError::Layer {
            layer: "(table)".into(),
            msg: format!("{} layers, expected {}", floats.layers.len(), shapes.len()),
        });
    }
    let mut layers = Vec::new();
    let mut report = Vec::new();
    for ((name, kind, o, i, k), fl) in shapes.iter().zip(&floats.layers) {
        let expect = [*o, *i, *k, *k];
        if fl.shape != expect || fl.data.len() != o * i * k * k {
            return Err(WeightError::Layer {
                layer: name.clone(),
                msg: format!("shape {:?} with {} values, expected {expect:?}", fl.shape, fl.data.len()),
            });
        }
        let mut sat = qarith::SaturationCounter::new();
        let mut max_err = 0.0f64;
        let taps = fl
            .data
            .iter()
            .map(|&x| {
                let q = qarith::quantize_counted(x, QFormat::WEIGHT, &mut sat);
                max_err = max_err.max((qarith::dequantize(q) - x).abs());
                q.raw() as i16
            })
            .collect();
        layers.push(LayerWeights::new(*kind, *o, *i, *k, *k, taps)?);
        report.push(QuantReport {
            layer: name.clone(),
            taps: fl.data.len(),
            max_abs_error: max_err,
            saturated: sat.count(),
        });
    }
    Ok((Model::from_layers(config, layers)?, report))
}

/// Random weights scaled so activations neither vanish nor pin to the clamp.
pub fn random_model(config: ModelConfig, seed: u64) -> Result<Model, WeightError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = config
        .layer_shapes()
        .into_iter()
        .map(|(_, kind, o, i, k)| {
            // roughly unit gain: uniform taps with variance 1 / fan_in
            let fan_in = (i * k * k) as f64 / if kind == LayerKind::TransposeConv { 4.0 } else { 1.0 };
            let bound = ((3.0 / fan_in).sqrt() * 256.0).min(1023.0) as i16;
            let taps = (0..o * i * k * k).map(|_| rng.gen_range(-bound..=bound)).collect();
            LayerWeights::new(kind, o, i, k, k, taps)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Model::from_layers(config, layers)?)
}

/// Seed for random-weight runs: `BSRA_SEED`, else a fixed default.
pub fn env_seed() -> u64 {
    std::env::var("BSRA_SEED")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0x5EED)
}

/// Float weights of the default topology with every tap zero.
pub fn zero_floats() -> FloatWeights {
    FloatWeights {
        layers: ModelConfig::default()
            .layer_shapes()
            .into_iter()
            .map(|(name, _, o, i, k)| FloatLayer {
                name,
                shape: [o, i, k, k],
                data: vec![0.0; o * i * k * k],
            })
            .collect(),
    }
}
