//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria that need external data report FAIL when the data is missing
//! without failing the run; every other criterion must pass.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use bsra::eval::{self, Method};
use bsra::pipeline::{self, Mode, RunOptions};
use bsra::weights::random_model;
use bsra::imaging::ImagePlane;
use bsra_core::hpan::{self, CpabWeights, FeatureMap, LayerKind, LayerWeights, MaskMap, Model, ModelConfig};
use bsra_core::memmodel::{self, SramBankSet, ON_CHIP_BUDGET_BYTES};
use bsra_core::pesim::cycles;
use bsra_core::pesim::schedule::{ConvGeometry, LoopOrder};
use bsra_core::qarith::{self, ACT_LIMIT_RAW};
use bsra_core::{tiler, DramLedger, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    /// Cannot be evaluated here; reported as FAIL, not asserted.
    Unavailable(String),
}

fn line(s: &str) {
    // written past the test harness capture so the lines always show
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{s}");
    let _ = out.flush();
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn to_verdict(r: Result<String, String>) -> Verdict {
    match r {
        Ok(s) => Verdict::Pass(s),
        Err(s) => Verdict::Fail(s),
    }
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, mag: i32) -> FeatureMap {
    let data = (0..c * h * w).map(|_| rng.gen_range(-mag..=mag)).collect();
    FeatureMap::from_raw(c, h, w, data).unwrap()
}

fn random_layer(rng: &mut ChaCha8Rng, kind: LayerKind, o: usize, i: usize, k: usize, mag: i16) -> LayerWeights {
    let taps = (0..o * i * k * k).map(|_| rng.gen_range(-mag..=mag)).collect();
    LayerWeights::new(kind, o, i, k, k, taps).unwrap()
}

fn random_pixels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FeatureMap {
    let px: Vec<u8> = (0..h * w).map(|_| rng.gen()).collect();
    FeatureMap::from_pixels(h, w, &px).unwrap()
}

/// Model with tap magnitudes drawn per layer, from gentle to saturating.
fn wild_model(rng: &mut ChaCha8Rng) -> Model {
    let cfg = ModelConfig::default();
    let c = cfg.channels;
    let mut mag = || [16i16, 64, 256, 1023][rng.gen_range(0..4)];
    let (m1, m2, m3, m4, m5, m6) = (mag(), mag(), mag(), mag(), mag(), mag());
    let mut m = Model::zeros(cfg).unwrap();
    m.head = random_layer(rng, LayerKind::Conv, c, 1, 5, m1);
    m.blocks = (0..cfg.num_cpab)
        .map(|_| CpabWeights {
            pw: random_layer(rng, LayerKind::Conv, c, c, 1, m2),
            mask: random_layer(rng, LayerKind::Conv, c, c, 1, m3),
            sp: random_layer(rng, LayerKind::Conv, c, c, 3, m4.min(m5)),
        })
        .collect();
    m.tail = random_layer(rng, LayerKind::TransposeConv, 1, c, 9, m6);
    m
}

fn set5_dir() -> PathBuf {
    std::env::var_os("BSRA_SET5_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/Set5"))
}

fn criterion_1() -> Verdict {
    let dir = set5_dir();
    if eval::list_images(&dir).is_err() {
        return Verdict::Unavailable(format!(
            "Set5 HR images not found in {} (set BSRA_SET5_DIR)",
            dir.display()
        ));
    }
    let start = Instant::now();
    let table = match eval::eval_dir(&dir, Method::Bicubic) {
        Ok(t) => t,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let took = start.elapsed();
    let mean = table.mean_psnr();
    let detail = format!("mean {mean:.3} dB over {} images in {took:.2?}", table.rows.len());
    if (mean - 33.66).abs() <= 0.15 && took < Duration::from_secs(60) {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn criterion_2() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    let mut tally = |same: bool| {
        cases += 1;
        mismatches += usize::from(!same);
    };
    let mags = [8i16, 64, 256, 1023];

    // convolutions up to 32×16×16
    for _ in 0..300 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (ci, co) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let x = random_map(&mut rng, ci, h, w, ACT_LIMIT_RAW);
        let mag = mags[rng.gen_range(0..4)];
        let wt = random_layer(&mut rng, LayerKind::Conv, co, ci, k, mag);
        let (y, _) = Simulator::new().run_conv_layer(&x, &wt).map_err(|e| e.to_string())?;
        tally(y == hpan::conv2d(&x, &wt).unwrap());
    }
    // pixel attention: mask conv, sigmoid and multiply
    for _ in 0..200 {
        let c = rng.gen_range(1..=32);
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let x = random_map(&mut rng, c, h, w, ACT_LIMIT_RAW);
        let mag = mags[rng.gen_range(0..4)];
        let wt = random_layer(&mut rng, LayerKind::Conv, c, c, 1, mag);
        let (y, _) = Simulator::new().run_pixel_attention(&x, &wt).map_err(|e| e.to_string())?;
        tally(y == hpan::pixel_attention(&x, &wt).unwrap());
    }
    // multiply stage with arbitrary masks
    for _ in 0..100 {
        let c = rng.gen_range(1..=32);
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let x = random_map(&mut rng, c, h, w, ACT_LIMIT_RAW);
        let m = MaskMap::from_raw(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0..2048)).collect()).unwrap();
        let (y, _) = Simulator::new().run_attention(&x, &m).map_err(|e| e.to_string())?;
        tally(y == hpan::apply_mask(&x, &m).unwrap());
    }
    // stride-2 tail
    for _ in 0..200 {
        let ci = rng.gen_range(1..=32);
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let x = random_map(&mut rng, ci, h, w, ACT_LIMIT_RAW);
        let mag = mags[rng.gen_range(0..4)];
        let wt = random_layer(&mut rng, LayerKind::TransposeConv, 1, ci, 9, mag);
        let (y, _) = Simulator::new().run_transpose_layer(&x, &wt).map_err(|e| e.to_string())?;
        tally(y == hpan::transpose_conv2d(&x, &wt).unwrap());
    }
    // whole model on small tiles
    for _ in 0..160 {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let model = wild_model(&mut rng);
        let t = random_pixels(&mut rng, h, w);
        let (y, _) = Simulator::new().simulate_model(&t, &model).map_err(|e| e.to_string())?;
        tally(y == tiler::fused_forward(&t, &model).unwrap());
    }
    // whole model on full 48×40 luma tiles
    for _ in 0..40 {
        let model = wild_model(&mut rng);
        let t = random_pixels(&mut rng, 48, 40);
        let (y, _) = Simulator::new().simulate_model(&t, &model).map_err(|e| e.to_string())?;
        tally(y == tiler::fused_forward(&t, &model).unwrap());
    }
    check(cases == 1000, format!("{cases} cases"))?;
    check(mismatches == 0, format!("{mismatches} of {cases} cases differ"))?;
    Ok(format!("{cases} cases, 0 mismatches"))
}

fn criterion_3() -> Result<String, String> {
    let cfg = ModelConfig::default();
    let parts: Vec<usize> = cfg
        .layer_shapes()
        .iter()
        .map(|(_, _, o, i, k)| o * i * k * k)
        .collect();
    let head = parts[0];
    let cpab: usize = parts[1..4].iter().sum();
    let tail = *parts.last().unwrap();
    let total = hpan::param_count(&cfg);
    check(total == 25_920, format!("param_count = {total}"))?;
    check((head, cpab, tail) == (800, 11_264, 2_592), format!("{head} + 2x{cpab} + {tail}"))?;
    check(head + 2 * cpab + tail == total, "decomposition does not sum")?;
    Ok(format!("{total} = {head} + 2x{cpab} + {tail}"))
}

fn criterion_4() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let model = random_model(ModelConfig::default(), 0xC4).unwrap();
    let img = random_pixels(&mut rng, 96, 80);
    let plan = tiler::split(96, 80, 48, 40);
    check(plan.tile_count() == 4, "expected four tiles")?;

    let full = hpan::forward(&img, &model).map_err(|e| e.to_string())?;
    let mut ledger = DramLedger::new();
    let (tiled, _) = bsra_core::pesim::simulate_image(&img, &model, &plan, &mut ledger).map_err(|e| e.to_string())?;
    let band = tiler::boundary_band(&plan, &model.config);

    let (mut interior, mut differing, mut outside) = (0, 0, 0);
    for (i, (&a, &b)) in full.data().iter().zip(tiled.image.data()).enumerate() {
        if !band[i] {
            interior += 1;
        }
        if a != b {
            differing += 1;
            if !band[i] {
                outside += 1;
            }
        }
    }
    check(outside == 0, format!("{outside} differing pixels outside the boundary band"))?;
    check(interior > 0 && differing > 0, "degenerate comparison")?;
    Ok(format!(
        "{interior} interior pixels identical; {differing} differing pixels, all within the {}-pixel band",
        band.iter().filter(|&&b| b).count()
    ))
}

fn criterion_5() -> Result<String, String> {
    let model = random_model(ModelConfig::default(), 0xC5).unwrap();
    let banks = SramBankSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    let mut peaks = Vec::new();
    for (h, w) in [(96, 80), (480, 400)] {
        let px: Vec<u8> = (0..h * w).map(|_| rng.gen()).collect();
        let img = ImagePlane::new(h, w, px).unwrap();
        let run = pipeline::upscale(
            &img,
            &model,
            RunOptions {
                mode: Mode::Simulate,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let l = run.ledger;
        check(l.bytes_intermediate == 0, format!("{h}x{w}: {} intermediate bytes", l.bytes_intermediate))?;
        check(l.bytes_weights == 35_640, format!("{h}x{w}: weights counted as {} bytes", l.bytes_weights))?;
        check(
            l.bytes_in == (h * w) as u64 && l.bytes_out == (4 * h * w) as u64,
            format!("{h}x{w}: image traffic {}/{}", l.bytes_in, l.bytes_out),
        )?;
        let sim = run.sim.unwrap();
        let on_chip = memmodel::weight_bytes(model.param_count() as u64) + sim.feature_peak_bytes + sim.psum_peak_bytes();
        check(on_chip <= ON_CHIP_BUDGET_BYTES, format!("{h}x{w}: {on_chip} bytes on chip"))?;
        let plan_peak = memmodel::plan_capacity_report(&model.config, &run.plan, &banks);
        check(plan_peak.pass(), format!("{h}x{w}: capacity check failed"))?;
        peaks.push((sim.feature_peak_bytes, sim.psum_buffer_peak, plan_peak.on_chip_peak_bytes(), on_chip));
    }
    check(peaks[0] == peaks[1], format!("SRAM peaks differ: {:?} vs {:?}", peaks[0], peaks[1]))?;
    Ok(format!(
        "intermediate 0 B, weights 35640 B once; peak on-chip {} B of {} B for both sizes",
        peaks[0].3, ON_CHIP_BUDGET_BYTES
    ))
}

fn criterion_6() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    // one 6×6 window of a 3×3 convolution: a 4×4 output, one channel
    let x = random_map(&mut rng, 1, 4, 4, 1000);
    let w = random_layer(&mut rng, LayerKind::Conv, 1, 1, 3, 100);
    let (_, s) = Simulator::new().run_conv_layer(&x, &w).map_err(|e| e.to_string())?;
    let multiply_cycles = s.cycles - 3;
    check(multiply_cycles == 9, format!("k=3 window took {multiply_cycles} multiply cycles"))?;
    let g = ConvGeometry::same(1, 1, 48, 40, 3, LoopOrder::ChannelMajor);
    check(g.strip_advance() == 4, "k=3 strip advance")?;

    let mut checked = 0;
    for k in [1, 3, 5] {
        for h in [8, 13, 29, 48] {
            for wd in [8, 21, 40] {
                let x = random_map(&mut rng, 32, h, wd, 1000);
                let w = random_layer(&mut rng, LayerKind::Conv, 32, 32, k, 50);
                let (_, s) = Simulator::new().run_conv_layer(&x, &w).map_err(|e| e.to_string())?;
                let g = ConvGeometry::same(32, 32, h, wd, k, LoopOrder::WindowMajor);
                let want = cycles::conv_cycles(&g);
                check(s.cycles == want, format!("k={k} {h}x{wd}: simulated {} vs analytic {want}", s.cycles))?;
                checked += 1;
            }
        }
    }
    let model = random_model(ModelConfig::default(), 0xC6).unwrap();
    for (h, w) in [(8, 8), (17, 33), (48, 40)] {
        let t = random_pixels(&mut rng, h, w);
        let (_, s) = Simulator::new().simulate_model(&t, &model).map_err(|e| e.to_string())?;
        let want = cycles::tile_cycles(&model.config, h, w);
        check(s.cycles == want, format!("model {h}x{w}: simulated {} vs analytic {want}", s.cycles))?;
        checked += 1;
    }
    Ok(format!("9 cycles per k=3 window, 4-row advance; {checked} layer/tile sizes match the closed form exactly"))
}

fn criterion_7() -> Result<String, String> {
    let cfg = ModelConfig::default();
    let report = cycles::fhd_budget(&cfg, 48, 40);
    let model = random_model(cfg, 0xC7).unwrap();
    let plan = tiler::split(540, 960, 48, 40);
    let mut shapes: Vec<(usize, usize)> = plan.tiles.iter().map(|t| (t.h, t.w)).collect();
    shapes.sort_unstable();
    shapes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    let mut simulated_plan = 0u64;
    for &(h, w) in &shapes {
        let t = random_pixels(&mut rng, h, w);
        let (_, s) = Simulator::new().simulate_model(&t, &model).map_err(|e| e.to_string())?;
        let analytic = cycles::tile_cycles(&cfg, h, w);
        check(s.cycles == analytic, format!("{h}x{w}: simulated {} vs analytic {analytic}", s.cycles))?;
        let n = plan.tiles.iter().filter(|t| (t.h, t.w) == (h, w)).count() as u64;
        simulated_plan += n * s.cycles;
        if (h, w) == (48, 40) {
            check(s.cycles == report.cycles_per_tile, "per-tile cycles disagree")?;
        }
    }
    check(simulated_plan == report.planned_cycles, "planned frame cycles disagree")?;
    check(report.budget_cycles == 15_700_000, "budget")?;
    Ok(format!(
        "{} tiles x {} cycles = {} cycles vs budget {} (ratio {:.2}, {}); analytic and simulated agree exactly",
        report.tiles,
        report.cycles_per_tile,
        report.extrapolated_cycles,
        report.budget_cycles,
        report.ratio(),
        if report.meets_budget() { "meets budget" } else { "over budget" }
    ))
}

fn criterion_8() -> Result<String, String> {
    // exhaustive over every activation the mask convolution can produce
    let mut worst = 0.0f64;
    for act in -ACT_LIMIT_RAW..=ACT_LIMIT_RAW {
        let exact = 1.0 / (1.0 + (-(f64::from(act) / 256.0 / 256.0)).exp());
        let got = f64::from(qarith::sigmoid_raw(act)) / 2048.0;
        worst = worst.max((got - exact).abs());
    }
    check(worst <= 2f64.powi(-9), format!("sigmoid error {worst:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let (mut samples, mut out_of_range, mut growth) = (0usize, 0usize, 0usize);
    while samples < 100_000 {
        let c = rng.gen_range(1..=32);
        let (h, w) = (rng.gen_range(4..=12), rng.gen_range(4..=12));
        let x = random_map(&mut rng, c, h, w, ACT_LIMIT_RAW);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let mag = [64, 256, 1023][rng.gen_range(0..3)];
        let wt = random_layer(&mut rng, LayerKind::Conv, c, c, k, mag);
        let y = hpan::conv2d(&x, &wt).unwrap();
        let mag = [64, 256, 1023][rng.gen_range(0..3)];
        let mask_w = random_layer(&mut rng, LayerKind::Conv, c, c, 1, mag);
        let z = hpan::pixel_attention(&y, &mask_w).unwrap();
        let tail = random_layer(&mut rng, LayerKind::TransposeConv, 1, c, 9, 1023);
        let t = hpan::transpose_conv2d(&z, &tail).unwrap();
        for v in y.data().iter().chain(z.data()).chain(t.data()) {
            samples += 1;
            out_of_range += usize::from(v.abs() > ACT_LIMIT_RAW);
        }
        growth += y.data().iter().zip(z.data()).filter(|(a, b)| b.abs() > a.abs()).count();
    }
    check(out_of_range == 0, format!("{out_of_range} activations beyond +-255"))?;
    check(growth == 0, format!("{growth} attention outputs grew"))?;
    Ok(format!(
        "sigmoid worst error {:.3e} <= 2^-9; {samples} activations within +-255; 0 contraction violations",
        worst
    ))
}

#[test]
fn acceptance() {
    type Criterion = (u8, &'static str, Box<dyn Fn() -> Verdict>);
    let criteria: Vec<Criterion> = vec![
        (1, "bicubic baseline on Set5", Box::new(criterion_1)),
        (2, "simulator equals functional model (1000 cases)", Box::new(|| to_verdict(criterion_2()))),
        (3, "parameter count 25,920", Box::new(|| to_verdict(criterion_3()))),
        (4, "block convolution interior equivalence", Box::new(|| to_verdict(criterion_4()))),
        (5, "external traffic is I/O only", Box::new(|| to_verdict(criterion_5()))),
        (6, "cycle schedule and closed-form cycle model", Box::new(|| to_verdict(criterion_6()))),
        (7, "full-HD throughput budget report", Box::new(|| to_verdict(criterion_7()))),
        (8, "arithmetic invariants", Box::new(|| to_verdict(criterion_8()))),
    ];
    let mut hard_failures = Vec::new();
    for (id, name, f) in &criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        match v {
            Verdict::Pass(d) => line(&format!("criterion {id} PASS: {name}: {d} [{took:.1?}]")),
            Verdict::Fail(d) => {
                line(&format!("criterion {id} FAIL: {name}: {d} [{took:.1?}]"));
                hard_failures.push(*id);
            }
            Verdict::Unavailable(d) => line(&format!("criterion {id} FAIL: {name}: not evaluated: {d}")),
        }
    }
    assert!(hard_failures.is_empty(), "criteria failed: {hard_failures:?}");
}
