//! Command-line interface.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bsra_core::memmodel::{self, SramBankSet};
use bsra_core::pesim::cycles;
use bsra_core::{Model, ModelConfig};
use clap::{Parser, Subcommand, ValueEnum};

use crate::eval::{self, Method};
use crate::imageio::{self, Image};
use crate::pipeline::{self, Mode, RunOptions, TileSize};
use crate::stats::{self, BudgetRecord, CapacityRecord, EvalSummary, Record, RunRecord};
use crate::weights;

#[derive(Debug, Parser)]
#[command(name = "bsra", version, about = "Fixed-point pixel-attention ×2 super-resolution and accelerator model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Bicubic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize float weights (JSON) into a weight file.
    Quantize {
        /// Float weights; omit with --random to write seeded random weights.
        input: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Random weights seeded from BSRA_SEED.
        #[arg(long, conflicts_with = "input")]
        random: bool,
    },
    /// Upscale one image ×2.
    Run {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Weight file; random weights seeded from BSRA_SEED when omitted.
        #[arg(short, long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Functional)]
        mode: Mode,
        /// Also run the functional model and require identical output.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value = "40x48")]
        tile: TileSize,
        /// Write a per-cycle trace (`cycle,unit,op`) to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// PSNR over a directory of HR images.
    Eval {
        dir: PathBuf,
        #[arg(short, long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Functional)]
        mode: Mode,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[arg(long, default_value = "40x48")]
        tile: TileSize,
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Buffer capacity and full-HD cycle budget for a tile size.
    Stats {
        #[arg(long, default_value = "40x48")]
        tile: TileSize,
        /// Input frame height for the budget estimate.
        #[arg(long, default_value_t = 540)]
        frame_height: usize,
        #[arg(long, default_value_t = 960)]
        frame_width: usize,
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
}

fn load_model(path: Option<&Path>) -> Result<Model> {
    match path {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            weights::decode(&bytes).with_context(|| format!("loading {}", p.display()))
        }
        None => Ok(weights::random_model(ModelConfig::default(), weights::env_seed())?),
    }
}

fn emit(path: Option<&Path>, records: &[Record]) -> Result<()> {
    match path {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            stats::write_records(BufWriter::new(f), records)?;
        }
        None => stats::write_records(io::stdout().lock(), records)?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Quantize { input, output, random } => {
            let model = match (input, random) {
                (Some(p), false) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    let floats: weights::FloatWeights = serde_json::from_str(&text)?;
                    let (model, report) = weights::quantize(&floats)?;
                    for r in &report {
                        println!(
                            "{:<12} {:>6} taps  max error {:.6}  saturated {}",
                            r.layer, r.taps, r.max_abs_error, r.saturated
                        );
                    }
                    model
                }
                (None, true) => weights::random_model(ModelConfig::default(), weights::env_seed())?,
                _ => bail!("give a float weight file or --random"),
            };
            fs::write(&output, weights::encode(&model)).with_context(|| format!("writing {}", output.display()))?;
            Ok(())
        }
        Command::Run {
            input,
            output,
            weights,
            mode,
            verify,
            tile,
            trace,
            stats_out,
        } => {
            let model = load_model(weights.as_deref())?;
            let img = imageio::read_image(&input).with_context(|| format!("reading {}", input.display()))?;
            let luma = img.luma();
            let mut trace_file = match &trace {
                Some(p) => Some(BufWriter::new(
                    fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
                )),
                None => None,
            };
            let outcome = pipeline::upscale(
                &luma,
                &model,
                RunOptions {
                    mode,
                    verify,
                    tile,
                    banks: SramBankSet::default(),
                    trace: trace_file.as_mut().map(|w| w as &mut dyn Write),
                },
            )?;
            if let Some(mut w) = trace_file {
                w.flush()?;
            }
            imageio::write_netpbm(&output, &Image::Gray(outcome.output.clone()))?;
            let rec = RunRecord::from_outcome(&input.display().to_string(), mode.as_str(), luma.height, luma.width, &outcome);
            eprintln!(
                "{}x{} -> {}x{}  tiles {}  cycles {}  dram in/out/weights/intermediate {}/{}/{}/{}",
                luma.height,
                luma.width,
                outcome.output.height,
                outcome.output.width,
                rec.tiles,
                rec.cycles,
                rec.bytes_in,
                rec.bytes_out,
                rec.bytes_weights,
                rec.bytes_intermediate
            );
            if stats_out.is_some() {
                emit(stats_out.as_deref(), &[Record::Run(rec)])?;
            }
            Ok(())
        }
        Command::Eval {
            dir,
            weights,
            mode,
            baseline,
            tile,
            stats_out,
        } => {
            let model;
            let method = match baseline {
                Some(Baseline::Bicubic) => Method::Bicubic,
                None => {
                    model = load_model(weights.as_deref())?;
                    Method::Model {
                        model: &model,
                        mode,
                        tile,
                    }
                }
            };
            let table = eval::eval_dir(&dir, method)?;
            let mut records = Vec::new();
            for row in &table.rows {
                println!("{:<24} {:>8.3} dB", row.name, row.psnr);
                let mut rec = match &row.run {
                    Some(o) => RunRecord::from_outcome(&row.name, method.name(), o.plan.image_h, o.plan.image_w, o),
                    None => RunRecord {
                        image: row.name.clone(),
                        mode: method.name().into(),
                        ..Default::default()
                    },
                };
                rec.psnr = Some(row.psnr);
                if rec.bytes_intermediate != 0 {
                    bail!("{}: intermediate features reached external memory", row.name);
                }
                records.push(Record::Run(rec));
            }
            let mean = table.mean_psnr();
            println!("{:<24} {:>8.3} dB", "mean", mean);
            records.push(Record::Eval(EvalSummary {
                method: method.name().into(),
                images: table.rows.len(),
                mean_psnr: Some(mean),
            }));
            if stats_out.is_some() {
                emit(stats_out.as_deref(), &records)?;
            }
            Ok(())
        }
        Command::Stats {
            tile,
            frame_height,
            frame_width,
            stats_out,
        } => {
            let cfg = ModelConfig::default();
            let banks = SramBankSet::default();
            let cap = memmodel::capacity_report(&cfg, tile.height, tile.width, &banks);
            let budget = cycles::frame_budget(
                &cfg,
                frame_height,
                frame_width,
                tile.height,
                tile.width,
                cycles::frame_budget_cycles(cycles::CLOCK_HZ, cycles::TARGET_FPS),
            );
            let mut records: Vec<Record> = CapacityRecord::from_report(&cap).into_iter().map(Record::Capacity).collect();
            records.push(Record::Budget(BudgetRecord::from(&budget)));
            emit(stats_out.as_deref(), &records)?;
            cap.check()?;
            Ok(())
        }
    }
}
