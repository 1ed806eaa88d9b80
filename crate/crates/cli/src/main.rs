use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use warpcodec::codec::ImageContainer;
use warpcodec::driver::MetricWeights;
use warpcodec::fixtures::{SquareFixture, StrokesFixture, DEFAULT_SEED};
use warpcodec::flow::{write_flo, DEFAULT_LAMBDA};
use warpcodec::weights::DEFAULT_SIGMA;
use warpcodec::{
    baseline, build_weight_map, dassd, edge_map, load_image, run, save_image, CodecHandle, CodecPreset,
    ExternalCodec, FlowParams, RateMode, RateSchedule, RateTarget, RunConfig, RunReport, WeightMap,
};

#[derive(Parser)]
#[command(name = "warpcodec", version, about = "Deformation-aware lossy image compression")]
struct Cli {
    /// Log every outer iteration to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the alternating deform/compress loop.
    Compress(CompressArgs),
    /// Plain compression at the target budget, for comparison.
    Baseline(BaselineArgs),
    /// SSD and deformation-aware SSD of A against B (B is warped onto A).
    Metric(MetricArgs),
    /// Write the synthetic test images.
    MakeFixtures(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecChoice {
    Global,
    Subband,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetChoice {
    Jpeg,
    Jpeg2000,
    Webp,
    Bpg,
    Learned,
}

impl From<PresetChoice> for CodecPreset {
    fn from(p: PresetChoice) -> Self {
        match p {
            PresetChoice::Jpeg => CodecPreset::Jpeg,
            PresetChoice::Jpeg2000 => CodecPreset::Jpeg2000,
            PresetChoice::Webp => CodecPreset::Webp,
            PresetChoice::Bpg => CodecPreset::Bpg,
            PresetChoice::Learned => CodecPreset::Learned,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Container {
    Png,
    Pnm,
}

#[derive(Args)]
#[command(group(ArgGroup::new("target").required(true).args(["ratio", "quality", "bpp"])))]
struct CodecArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    codec: CodecChoice,
    /// Encoder command with {in}, {out} and {q} placeholders.
    #[arg(long)]
    codec_cmd: Option<String>,
    /// Decoder command with {in} and {out} (and optionally {src}) placeholders.
    #[arg(long)]
    decode_cmd: Option<String>,
    /// Extension of the encoded file.
    #[arg(long, default_value = "bin")]
    encoded_ext: String,
    /// Container the source image is handed to the encoder in.
    #[arg(long, value_enum, default_value = "png")]
    input_container: Container,
    #[arg(long, default_value_t = 0)]
    q_min: i64,
    #[arg(long, default_value_t = 100)]
    q_max: i64,
    /// Smaller quality parameters give better quality.
    #[arg(long)]
    lower_is_better: bool,
    /// Probe every quality parameter instead of bisecting.
    #[arg(long)]
    full_scan: bool,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    /// Codec family for external codecs (schedule start and alpha).
    #[arg(long, value_enum)]
    preset: Option<PresetChoice>,
    /// Wavelet levels for the built-in codecs.
    #[arg(long, default_value_t = warpcodec::wavelet::DEFAULT_LEVELS)]
    levels: usize,
    /// Compression ratio N (N:1).
    #[arg(long)]
    ratio: Option<f64>,
    /// Quality parameter for external codecs.
    #[arg(long)]
    quality: Option<f64>,
    /// Bits per pixel for external codecs.
    #[arg(long)]
    bpp: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleChoice {
    Direct,
    Gradual,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Edge weight strength (codec-specific default).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, value_enum, default_value = "gradual")]
    schedule: ScheduleChoice,
    /// Outer iterations of the direct schedule (default: as many as the
    /// gradual schedule would take).
    #[arg(long)]
    iterations: Option<usize>,
    /// Report the final DASSD with a constant weight map.
    #[arg(long)]
    constant_w_metric: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write the final flow as flow.flo.
    #[arg(long)]
    dump_flow: bool,
    /// Also write edges.png and weights.png.
    #[arg(long)]
    dump_weights: bool,
    /// Report path (default: OUT_DIR/report.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Use w ≡ 1 instead of the edge-derived weight map of B.
    #[arg(long)]
    constant_w: bool,
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

fn usage_error(kind: ErrorKind, message: &str) -> ! {
    Cli::command().error(kind, message).exit()
}

impl CodecArgs {
    fn target(&self) -> RateTarget {
        match (self.ratio, self.quality, self.bpp) {
            (Some(r), _, _) => RateTarget::Ratio(r),
            (_, Some(q), _) => RateTarget::Quality(q),
            (_, _, Some(b)) => RateTarget::Bpp(b),
            _ => unreachable!("clap enforces one target"),
        }
    }

    /// Flag combinations that clap cannot express; exits with status 2.
    fn check(&self) {
        match self.codec {
            CodecChoice::External if self.codec_cmd.is_none() => {
                usage_error(ErrorKind::MissingRequiredArgument, "--codec external requires --codec-cmd")
            }
            CodecChoice::Global | CodecChoice::Subband if self.ratio.is_none() => usage_error(
                ErrorKind::ArgumentConflict,
                "built-in codecs take --ratio, not --quality or --bpp",
            ),
            _ => {}
        }
        if !(self.target().value() > 0.0) {
            usage_error(ErrorKind::ValueValidation, "the target must be positive");
        }
        if self.preset.is_some() && !matches!(self.codec, CodecChoice::External) {
            usage_error(ErrorKind::ArgumentConflict, "--preset applies to external codecs");
        }
    }

    fn handle(&self) -> CodecHandle {
        let mut handle = match self.codec {
            CodecChoice::Global => CodecHandle::global_threshold(),
            CodecChoice::Subband => CodecHandle::subband_threshold(),
            CodecChoice::External => {
                let mut ext = ExternalCodec::new(self.codec_cmd.clone().unwrap_or_default());
                ext.decode = self.decode_cmd.clone();
                ext.encoded_extension = self.encoded_ext.clone();
                ext.input_container = match self.input_container {
                    Container::Png => ImageContainer::Png,
                    Container::Pnm => ImageContainer::Pnm,
                };
                ext.q_min = self.q_min;
                ext.q_max = self.q_max;
                ext.higher_is_better = !self.lower_is_better;
                ext.full_scan = self.full_scan;
                ext.timeout = Duration::from_secs_f64(self.timeout_secs.max(0.0));
                CodecHandle::external(ext)
            }
        };
        handle.levels = self.levels;
        handle
    }

    fn preset(&self, handle: &CodecHandle) -> CodecPreset {
        self.preset
            .map(CodecPreset::from)
            .unwrap_or_else(|| CodecPreset::infer(handle, RateMode::of(&self.target())))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn compress(args: CompressArgs) -> Result<()> {
    args.codec.check();
    let y = load_image(&args.codec.input)?;
    let handle = args.codec.handle();
    let target = args.codec.target();
    let mut cfg = RunConfig::with_preset(handle.clone(), args.codec.preset(&handle), target)?;
    if let ScheduleChoice::Direct = args.schedule {
        let n = match args.iterations {
            Some(n) => n,
            None => cfg.schedule.values()?.len(),
        };
        cfg.schedule = RateSchedule::direct(target, n);
    }
    cfg.lambda = args.lambda;
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.sigma = args.sigma;
    if args.constant_w_metric {
        cfg.metric_weights = MetricWeights::Constant;
    }

    prepare_dir(&args.out_dir)?;
    let out = run(&y, &cfg)?;
    save_image(&out.deformed, args.out_dir.join("deformed.png"))?;
    save_image(&out.compressed, args.out_dir.join("compressed.png"))?;
    if args.dump_flow {
        write_flo(&out.flow, args.out_dir.join("flow.flo"))?;
    }
    if args.dump_weights {
        save_image(&edge_map(&y), args.out_dir.join("edges.png"))?;
        save_image(&out.weights.to_image(), args.out_dir.join("weights.png"))?;
    }
    let report_path = args.report.unwrap_or_else(|| args.out_dir.join("report.json"));
    let input = args.codec.input.display().to_string();
    write_json(&report_path, &RunReport::new(&cfg, &out, Some(input)))?;

    let m = &out.report;
    println!(
        "{} iterations, rate {:.5}, ssd {:.6}, psnr {:.2} dB, dassd {:.6}, ssd to deformed {:.6}",
        m.iterations, m.achieved_rate, m.ssd, m.psnr, m.dassd, out.ssd_to_deformed
    );
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport<'a> {
    schema_version: u32,
    input: String,
    codec: &'a CodecHandle,
    target: RateTarget,
    metrics: warpcodec::MetricsReport,
}

fn baseline_cmd(args: BaselineArgs) -> Result<()> {
    args.codec.check();
    let y = load_image(&args.codec.input)?;
    let handle = args.codec.handle();
    let target = args.codec.target();
    let w = WeightMap::constant(y.width(), y.height());
    let params = FlowParams::default().with_lambda(args.lambda);
    prepare_dir(&args.out_dir)?;
    let out = baseline(&y, &handle, target, &w, &params)?;
    save_image(&out.compressed, args.out_dir.join("compressed.png"))?;
    let report_path = args.report.unwrap_or_else(|| args.out_dir.join("report.json"));
    write_json(
        &report_path,
        &BaselineReport {
            schema_version: warpcodec::driver::REPORT_SCHEMA_VERSION,
            input: args.codec.input.display().to_string(),
            codec: &handle,
            target,
            metrics: out.report.clone(),
        },
    )?;
    let m = &out.report;
    println!(
        "rate {:.5}, ssd {:.6}, psnr {:.2} dB, dassd {:.6}",
        m.achieved_rate, m.ssd, m.psnr, m.dassd
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricOutput {
    ssd: f64,
    #[serde(serialize_with = "finite_or_null")]
    psnr: f64,
    dassd: f64,
    flow_penalty: f64,
}

fn finite_or_null<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn metric(args: MetricArgs) -> Result<()> {
    let a = load_image(&args.a)?;
    let b = load_image(&args.b)?;
    if !a.same_shape(&b) {
        anyhow::bail!(
            "dimension mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        );
    }
    let w = if args.constant_w {
        WeightMap::constant(b.width(), b.height())
    } else {
        build_weight_map(&b, args.alpha, args.sigma)?
    };
    let r = dassd(&a, &b, &w, &FlowParams::default().with_lambda(args.lambda))?;
    let out = MetricOutput {
        ssd: r.ssd,
        psnr: r.psnr,
        dassd: r.dassd,
        flow_penalty: r.flow_penalty,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn make_fixtures(args: FixtureArgs) -> Result<()> {
    prepare_dir(&args.out_dir)?;
    let square = SquareFixture {
        seed: args.seed,
        ..Default::default()
    };
    let strokes = StrokesFixture {
        seed: args.seed,
        ..Default::default()
    };
    save_image(&square.original(), args.out_dir.join("square.png"))?;
    save_image(&square.shifted(), args.out_dir.join("square_shifted.png"))?;
    save_image(&strokes.render(), args.out_dir.join("strokes.png"))?;
    println!(
        "square.png, square_shifted.png ({0}x{0}, {1}x{1} square at ({2}, {3}), shift {4}); strokes.png ({5}x{5})",
        square.size, square.square_size, square.square_x, square.square_y, square.shift, strokes.size
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Cmd::Compress(a) => compress(a),
        Cmd::Baseline(a) => baseline_cmd(a),
        Cmd::Metric(a) => metric(a),
        Cmd::MakeFixtures(a) => make_fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
