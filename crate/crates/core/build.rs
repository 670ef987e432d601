// Generates the sigmoid lookup table shared by the functional model and the
// cycle simulator.
//
// Entry i holds sigmoid(i / 512) as an unsigned Q0.11 fraction, rounded half
// up. Lookups index by the magnitude of the shifted input, rounded to the
// nearest table step, and mirror negative inputs as 1 - table[i].

use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

const ENTRIES: usize = 512;
const MASK_FRAC_BITS: u32 = 11;

fn main() {
    let mut src = String::new();
    writeln!(src, "pub(crate) static SIGMOID_LUT: [u16; {ENTRIES}] = [").unwrap();
    for i in 0..ENTRIES {
        let t = i as f64 / ENTRIES as f64;
        let s = 1.0 / (1.0 + (-t).exp());
        let raw = (s * f64::from(1u32 << MASK_FRAC_BITS) + 0.5).floor() as u16;
        writeln!(src, "    {raw},").unwrap();
    }
    src.push_str("];\n");

    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("sigmoid_lut.rs");
    fs::write(out, src).unwrap();
    println!("cargo:rerun-if-changed=build.rs");
}
