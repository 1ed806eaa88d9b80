//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpcodec::codec::probe_external;
use warpcodec::fixtures::{SquareFixture, StrokesFixture};
use warpcodec::flow::{estimate_flow_traced, flow_gradient_check};
use warpcodec::wavelet::{
    check_levels, compress_subband_threshold, dwt_forward, dwt_inverse, global_threshold, ThresholdBudget,
    DEFAULT_LEVELS,
};
use warpcodec::{
    baseline, build_weight_map, compress_to_budget, dassd, run, ssd, CodecHandle, Error, ExternalCodec, FlowField,
    FlowParams, Image, RateTarget, RunConfig, WeightMap,
};

type Outcome = Result<String, String>;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    let planes = (0..c).map(|_| (0..w * h).map(|_| rng.gen::<f64>()).collect()).collect();
    Image::from_planes(w, h, planes).unwrap()
}

/// Smooth random field: a few Gaussian bumps plus mild noise.
fn smooth_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(2.0..8.0),
                rng.gen_range(-0.4..0.4),
            )
        })
        .collect();
    let noise: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-0.02..0.02)).collect();
    Image::from_fn(w, h, |c, r| {
        let mut v = 0.5 + noise[r * w + c];
        for &(cx, cy, s, a) in &bumps {
            v += a * (-((c as f64 - cx).powi(2) + (r as f64 - cy).powi(2)) / (2.0 * s * s)).exp();
        }
        v.clamp(0.0, 1.0)
    })
    .unwrap()
}

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, amp: f64) -> FlowField {
    let u = (0..w * h).map(|_| rng.gen_range(-amp..amp)).collect();
    let v = (0..w * h).map(|_| rng.gen_range(-amp..amp)).collect();
    FlowField::new(w, h, u, v).unwrap()
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn metric_bounds() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_ratio: f64 = 0.0;
    for i in 0..200 {
        let w = rng.gen_range(16..=64);
        let h = rng.gen_range(16..=64);
        let c = if i % 4 == 0 { 3 } else { 1 };
        let y = if i % 2 == 0 { random_image(&mut rng, w, h, c) } else { smooth_image(&mut rng, w, h) };
        let x = if i % 2 == 0 {
            random_image(&mut rng, w, h, c)
        } else {
            let f = random_flow(&mut rng, w, h, 1.5);
            warpcodec::warp(&y, &f).unwrap()
        };
        let wm = build_weight_map(&y, 3.0, 10.0).unwrap();
        let p = FlowParams::default();
        let r = dassd(&x, &y, &wm, &p).unwrap();
        if r.dassd > r.ssd {
            return Err(format!("pair {i}: dassd {} > ssd {}", r.dassd, r.ssd));
        }
        let own = dassd(&x, &x, &build_weight_map(&x, 3.0, 10.0).unwrap(), &p).unwrap();
        if own.dassd.abs() > 1e-9 {
            return Err(format!("pair {i}: dassd(x, x) = {}", own.dassd));
        }
        if r.ssd > 0.0 {
            worst_ratio = worst_ratio.max(r.dassd / r.ssd);
        }
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("200 pairs, max dassd/ssd {worst_ratio:.4}, {:.1?}", start.elapsed()))
}

fn parseval_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (w, h) = (rng.gen_range(16..=48), rng.gen_range(16..=48));
        let c = if i % 5 == 0 { 3 } else { 1 };
        let img = random_image(&mut rng, w, h, c);
        let budget = ThresholdBudget::from_ratio(rng.gen_range(1.5..40.0)).unwrap();
        let out = global_threshold(&img, budget, DEFAULT_LEVELS).unwrap();
        let mut mags: Vec<f64> = dwt_forward(&img, DEFAULT_LEVELS)
            .unwrap()
            .coefficients()
            .iter()
            .map(|v| v.abs())
            .collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let keep = budget.kept_count(mags.len());
        let discarded: f64 = mags[keep..].iter().map(|v| v * v).sum();
        let actual = ssd(&out.decoded, &img).unwrap();
        let rel = (actual - discarded).abs() / discarded.max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        if rel > 1e-6 {
            return Err(format!("image {i}: ssd {actual} vs discarded energy {discarded}"));
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("50 images, max relative error {worst:.2e}"))
}

fn perfect_reconstruction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut odd = 0;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(2..=70), rng.gen_range(2..=70));
        let mut levels = rng.gen_range(1..=6);
        while check_levels(w, h, levels).is_err() {
            levels -= 1;
        }
        if w % 2 == 1 || h % 2 == 1 {
            odd += 1;
        }
        let img = random_image(&mut rng, w, h, if w % 3 == 0 { 3 } else { 1 });
        let back = dwt_inverse(&dwt_forward(&img, levels).unwrap()).unwrap();
        for (a, b) in img.planes().iter().flatten().zip(back.planes().iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1e-9 {
        return Err(format!("max sample error {worst:.2e}"));
    }
    Ok(format!("100 sizes ({odd} with an odd side), max error {worst:.2e}"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let square = SquareFixture {
        size: 32,
        square_x: 14,
        square_y: 12,
        ..Default::default()
    };
    let strokes = StrokesFixture {
        size: 32,
        ..Default::default()
    }
    .render();
    let noisy = random_image(&mut rng, 24, 20, 3);
    let smooth = smooth_image(&mut rng, 24, 20);
    let cases = [
        (square.original(), square.shifted()),
        (strokes.clone(), compress_subband_threshold(&strokes, ThresholdBudget::from_ratio(10.0).unwrap(), 3).unwrap()),
        (noisy.clone(), random_image(&mut rng, 24, 20, 3)),
        (smooth.clone(), smooth_image(&mut rng, 24, 20)),
    ];
    let mut worst: f64 = 0.0;
    for (y, x) in &cases {
        let (w, h) = (y.width(), y.height());
        for &lambda in &[0.0, 65.0, 6500.0] {
            let flow = random_flow(&mut rng, w, h, 1.2);
            let wm = build_weight_map(y, 3.0, 4.0).unwrap();
            let err = flow_gradient_check(y, x, &flow, &wm, lambda).unwrap();
            worst = worst.max(err);
        }
    }
    if worst >= 1e-4 {
        return Err(format!("max relative error {worst:.2e}"));
    }
    Ok(format!("4 fixtures x 3 lambdas, max relative error {worst:.2e}"))
}

fn energy_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let square = SquareFixture::default();
    let strokes = StrokesFixture::default().render();
    let squashed = compress_subband_threshold(&strokes, ThresholdBudget::from_ratio(40.0).unwrap(), 4).unwrap();
    let smooth = smooth_image(&mut rng, 48, 40);
    let moved = warpcodec::warp(&smooth, &random_flow(&mut rng, 48, 40, 2.0)).unwrap();
    let fixtures = [
        ("square", square.original(), square.shifted()),
        ("strokes", strokes.clone(), squashed),
        ("smooth", smooth, moved),
        ("noise", random_image(&mut rng, 40, 40, 3), random_image(&mut rng, 40, 40, 3)),
    ];
    let mut checked = 0;
    let mut rejected = 0;
    for (name, y, x) in &fixtures {
        for charbonnier in [false, true] {
            for &lambda in &[0.0, 65.0, 650.0] {
                let params = FlowParams {
                    charbonnier,
                    ..FlowParams::default().with_lambda(lambda)
                };
                let wm = build_weight_map(y, 3.0, 10.0).unwrap();
                let (_, trace) = estimate_flow_traced(y, x, &wm, &params, None).unwrap();
                rejected += trace.rejected_steps;
                for pair in trace.finest_energies.windows(2) {
                    if pair[1] > pair[0] * (1.0 + 1e-6) {
                        return Err(format!("{name}: energy rose {} -> {}", pair[0], pair[1]));
                    }
                }
                checked += trace.finest_energies.len().saturating_sub(1);
            }
        }
    }
    Ok(format!("{checked} outer iterations checked, {rejected} steps halved"))
}

fn shift_sensitivity() -> Outcome {
    let start = Instant::now();
    let f = SquareFixture::default();
    let budget = ThresholdBudget::from_ratio(40.0).unwrap();
    let a = f.original();
    let b = f.shifted();
    let c = compress_subband_threshold(&a, budget, DEFAULT_LEVELS).unwrap();
    let d = compress_subband_threshold(&b, budget, DEFAULT_LEVELS).unwrap();
    let err_a = ssd(&c, &a).unwrap();
    let err_b = ssd(&d, &b).unwrap();
    let alignment = err_a.max(err_b) / err_a.min(err_b);
    let w = WeightMap::constant(f.size, f.size);
    let p = FlowParams::default();
    let dc = dassd(&c, &a, &w, &p).unwrap();
    let dd = dassd(&d, &a, &w, &p).unwrap();
    let summary = format!(
        "self-error {err_a:.4} vs {err_b:.4} ({alignment:.2}x); ssd to input {:.4} vs {:.4} ({:.0}x larger), dassd {:.4} vs {:.4} ({:.0}% lower)",
        dc.ssd,
        dd.ssd,
        dd.ssd / dc.ssd,
        dc.dassd,
        dd.dassd,
        100.0 * (1.0 - dd.dassd / dc.dassd)
    );
    within(start.elapsed(), Duration::from_secs(60))?;
    if alignment < 2.0 {
        return Err(format!("alignment ratio below 2: {summary}"));
    }
    // SSD prefers the compressed original, DASSD the compressed shifted copy
    if !(dd.ssd > dc.ssd && dd.dassd < dc.dassd) {
        return Err(format!("orderings not inverted: {summary}"));
    }
    Ok(summary)
}

struct StrokesRuns {
    ours_ssd_to_deformed: f64,
    baseline_ssd: f64,
    gradual_dassd: f64,
    direct_dassd: f64,
    iterations: usize,
}

fn strokes_runs() -> StrokesRuns {
    let y = StrokesFixture::default().render();
    let target = RateTarget::Ratio(40.0);
    let codec = CodecHandle::subband_threshold();
    let gradual_cfg = RunConfig::gradual(codec.clone(), target).unwrap();
    let gradual = run(&y, &gradual_cfg).unwrap();
    let iterations = gradual.trace.iterations.len();
    let direct = run(&y, &RunConfig::direct(codec.clone(), target, iterations).unwrap()).unwrap();
    let base = baseline(&y, &codec, target, &gradual.weights, &gradual_cfg.flow).unwrap();
    StrokesRuns {
        ours_ssd_to_deformed: gradual.ssd_to_deformed,
        baseline_ssd: base.report.ssd,
        gradual_dassd: gradual.report.dassd,
        direct_dassd: direct.report.dassd,
        iterations,
    }
}

fn deformation_gain(r: &StrokesRuns) -> Outcome {
    let gap = 1.0 - r.ours_ssd_to_deformed / r.baseline_ssd;
    let summary = format!(
        "ssd(compressed, deformed) {:.4} vs baseline {:.4}, gap {:.1}%",
        r.ours_ssd_to_deformed,
        r.baseline_ssd,
        100.0 * gap
    );
    if gap >= 0.10 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn gradual_schedule(r: &StrokesRuns) -> Outcome {
    let summary = format!(
        "final dassd gradual {:.4} vs direct {:.4} over {} iterations ({:.1}% lower)",
        r.gradual_dassd,
        r.direct_dassd,
        r.iterations,
        100.0 * (1.0 - r.gradual_dassd / r.direct_dassd)
    );
    if r.gradual_dassd <= r.direct_dassd * 1.02 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn external_adapter() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = random_image(&mut rng, 16, 16, 1);
    let img = Image::from_bytes(16, 16, 1, &img.to_bytes()).unwrap();

    let mut identity = ExternalCodec::new("cp {in} {out} # {q}");
    identity.encoded_extension = "png".into();
    let r = compress_to_budget(&CodecHandle::external(identity), &img, RateTarget::Bpp(1e6)).map_err(|e| e.to_string())?;
    if r.decoded != img {
        return Err("identity codec changed the image".into());
    }

    let mut fixed = ExternalCodec::new("head -c 1000 /dev/zero > {out} # {in} {q}");
    fixed.decode = Some("cp {src} {out}".into());
    let fixed = CodecHandle::external(fixed);
    let r = compress_to_budget(&fixed, &img, RateTarget::Bpp(31.25)).map_err(|e| e.to_string())?;
    if r.bytes != Some(1000) || r.codec_parameter != 100.0 {
        return Err(format!("fixed-size codec: {:?} bytes at q {}", r.bytes, r.codec_parameter));
    }
    if !matches!(
        compress_to_budget(&fixed, &img, RateTarget::Bpp(31.0)),
        Err(Error::BudgetInfeasible { .. })
    ) {
        return Err("fixed-size codec below its size did not report an infeasible budget".into());
    }

    let mut monotone = ExternalCodec::new("head -c $(( {q} * {q} + 20 )) /dev/zero > {out} # {in}");
    monotone.decode = Some("cp {src} {out}".into());
    monotone.q_max = 40;
    let rates: Vec<f64> = (0..=40)
        .map(|q| probe_external(&monotone, &img, q).unwrap().bytes as f64 * 8.0 / 256.0)
        .collect();
    let mut budgets = 0;
    for &bpp in &[0.7, 1.0, 5.5, 13.0, 27.1, 50.0] {
        let expected = rates.iter().rposition(|&r| r <= bpp).unwrap() as f64;
        let got = compress_to_budget(&CodecHandle::external(monotone.clone()), &img, RateTarget::Bpp(bpp))
            .map_err(|e| e.to_string())?;
        if got.codec_parameter != expected {
            return Err(format!("budget {bpp}: bisection chose q {} , scan {expected}", got.codec_parameter));
        }
        budgets += 1;
    }

    let failing = CodecHandle::external(ExternalCodec::new("echo nope >&2; exit 3 # {in} {out} {q}"));
    match compress_to_budget(&failing, &img, RateTarget::Quality(5.0)) {
        Err(Error::ExternalFailed { stderr, .. }) if stderr == "nope" => {}
        other => return Err(format!("failing encoder: {other:?}")),
    }
    let silent = CodecHandle::external(ExternalCodec::new("true {in} {out} {q}"));
    if !matches!(
        compress_to_budget(&silent, &img, RateTarget::Quality(5.0)),
        Err(Error::MissingOutput(_))
    ) {
        return Err("missing output not reported".into());
    }
    let mut slow = ExternalCodec::new("sleep 3; cp {in} {out} # {q}");
    slow.timeout = Duration::from_millis(200);
    if !matches!(
        compress_to_budget(&CodecHandle::external(slow), &img, RateTarget::Quality(5.0)),
        Err(Error::Timeout(_))
    ) {
        return Err("timeout not reported".into());
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "bisection matched the exhaustive scan on {budgets} budgets; failure modes reported; {:.1?}",
        start.elapsed()
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_warpcodec"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn report_without_timestamp(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    value
        .as_object_mut()
        .ok_or("report is not an object")?
        .remove("timestamp")
        .ok_or("report has no timestamp")?;
    Ok(value)
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let fixtures = root.join("fixtures");
    cli(&["make-fixtures", "--out-dir", fixtures.to_str().unwrap()])?;
    let input = fixtures.join("strokes.png");
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = root.join(name);
        cli(&[
            "compress",
            "--input",
            input.to_str().unwrap(),
            "--codec",
            "subband",
            "--ratio",
            "40",
            "--schedule",
            "gradual",
            "--out-dir",
            out.to_str().unwrap(),
        ])?;
        runs.push(out);
    }
    for file in ["deformed.png", "compressed.png"] {
        let a = std::fs::read(runs[0].join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(runs[1].join(file)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{file} differs between runs"));
        }
    }
    if report_without_timestamp(&runs[0].join("report.json"))? != report_without_timestamp(&runs[1].join("report.json"))? {
        return Err("report.json differs beyond the timestamp".into());
    }
    Ok("deformed.png, compressed.png and report.json identical across two runs".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:2} {tag} {name}: {detail}");
    };
    report(1, "metric bounds", metric_bounds());
    report(2, "threshold error equals discarded energy", parseval_oracle());
    report(3, "perfect reconstruction", perfect_reconstruction());
    report(4, "flow gradient", gradient_check());
    report(5, "energy monotonicity", energy_monotonicity());
    report(6, "shift sensitivity and ordering inversion", shift_sensitivity());
    let strokes = strokes_runs();
    report(7, "deformation-aware gain on strokes", deformation_gain(&strokes));
    report(8, "gradual schedule", gradual_schedule(&strokes));
    report(9, "external codec adapter", external_adapter());
    report(10, "end-to-end determinism", end_to_end_determinism());
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
