//! Bit-exact fixed-point model of a block-based super-resolution accelerator.
//!
//! The crate is `no_std` (with `alloc`) and carries only the arithmetic:
//!
//! * [`qarith`]: fixed-point formats, clamping, the sigmoid table.
//! * [`hpan`]: the functional pixel-attention network, the golden reference.
//! * [`tiler`]: block convolution over non-overlapping tiles and stitching.
//! * [`pesim`]: cycle-level model of the 32 PE arrays and the accumulator.
//! * [`memmodel`]: on-chip buffer capacities and the external traffic ledger.
//!
//! File formats, image IO and the command line live in the `bsra` crate.

#![no_std]

extern crate alloc;

mod error;
pub mod hpan;
pub mod memmodel;
pub mod pesim;
pub mod qarith;
pub mod tiler;

pub use error::{Error, Result};
pub use hpan::{FeatureMap, LayerKind, LayerWeights, MaskMap, Model, ModelConfig};
pub use memmodel::{AccessKind, DramLedger, SramBankSet};
pub use pesim::{SimStats, Simulator};
pub use qarith::{MaskValue, QFormat, QValue};
pub use tiler::{StitchedOutput, TilePlan, TileRect};
