//! Line-delimited JSON records written by `--stats-out` and `stats`.

use std::io::{self, Write};

use bsra_core::memmodel::CapacityReport;
use bsra_core::pesim::cycles::BudgetReport;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::pipeline::RunOutcome;

/// PSNR in dB; identical images are written as the string `"inf"`.
mod db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Db>::deserialize(d)? {
            None => None,
            Some(Db::Num(x)) => Some(x),
            Some(Db::Text(t)) if t == "inf" => Some(f64::INFINITY),
            Some(Db::Text(t)) => return Err(serde::de::Error::custom(format!("bad psnr `{t}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Run(RunRecord),
    Eval(EvalSummary),
    Capacity(CapacityRecord),
    Budget(BudgetRecord),
}

/// One image through the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunRecord {
    pub image: String,
    pub mode: String,
    pub height: usize,
    pub width: usize,
    pub tiles: usize,
    pub cycles: u64,
    pub mac_ops: u64,
    pub utilization: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub bytes_weights: u64,
    pub bytes_intermediate: u64,
    pub sram_weight_bytes: u64,
    pub sram_feature_peak_bytes: u64,
    pub sram_psum_peak_bytes: u64,
    pub saturation_events: u64,
    #[serde(with = "db", default)]
    pub psnr: Option<f64>,
    pub verified: Option<bool>,
}

impl RunRecord {
    pub fn from_outcome(image: &str, mode: &str, input_h: usize, input_w: usize, o: &RunOutcome) -> Self {
        let (cycles, mac_ops, utilization, feature, psum) = match &o.sim {
            Some(s) => (s.cycles, s.mac_ops, s.utilization(), s.feature_peak_bytes, s.psum_peak_bytes()),
            None => (0, 0, 0.0, o.capacity.feature.peak_bytes, o.capacity.psum.peak_bytes),
        };
        Self {
            image: image.into(),
            mode: mode.into(),
            height: input_h,
            width: input_w,
            tiles: o.plan.tile_count(),
            cycles,
            mac_ops,
            utilization,
            bytes_in: o.ledger.bytes_in,
            bytes_out: o.ledger.bytes_out,
            bytes_weights: o.ledger.bytes_weights,
            bytes_intermediate: o.ledger.bytes_intermediate,
            sram_weight_bytes: o.capacity.weight.peak_bytes,
            sram_feature_peak_bytes: feature,
            sram_psum_peak_bytes: psum,
            saturation_events: o.saturation_events,
            psnr: None,
            verified: o.verified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub images: usize,
    #[serde(with = "db", default)]
    pub mean_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRecord {
    pub class: String,
    pub peak_bytes: u64,
    pub capacity_bytes: u64,
    pub layer: String,
    pub pass: bool,
}

impl CapacityRecord {
    pub fn from_report(r: &CapacityReport) -> Vec<Self> {
        [&r.weight, &r.feature, &r.psum]
            .into_iter()
            .map(|c| Self {
                class: c.class.into(),
                peak_bytes: c.peak_bytes,
                capacity_bytes: c.capacity_bytes,
                layer: c.layer.clone(),
                pass: c.pass(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRecord {
    pub frame_h: usize,
    pub frame_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub tiles: usize,
    pub cycles_per_tile: u64,
    pub extrapolated_cycles: u64,
    pub planned_cycles: u64,
    pub budget_cycles: u64,
    pub ratio: f64,
    pub meets_budget: bool,
}

impl From<&BudgetReport> for BudgetRecord {
    fn from(r: &BudgetReport) -> Self {
        Self {
            frame_h: r.frame_h,
            frame_w: r.frame_w,
            tile_h: r.tile_h,
            tile_w: r.tile_w,
            tiles: r.tiles,
            cycles_per_tile: r.cycles_per_tile,
            extrapolated_cycles: r.extrapolated_cycles,
            planned_cycles: r.planned_cycles,
            budget_cycles: r.budget_cycles,
            ratio: r.ratio(),
            meets_budget: r.meets_budget(),
        }
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_records(text: &str) -> serde_json::Result<Vec<Record>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
