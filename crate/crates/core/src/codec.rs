//! One compress-to-budget interface over the built-in thresholding codecs
//! and external encoder binaries.
//!
//! External codecs are driven through shell command templates:
//!
//! * `encode` must contain `{in}`, `{out}` and `{q}`. `{in}` is the source
//!   image (PNG or binary PNM), `{out}` the encoded file whose size is the
//!   rate, `{q}` the quality parameter.
//! * `decode` (optional) turns the encoded file back into a PNG/PNM image.
//!   It may use `{in}` (encoded file), `{out}` (decoded image) and `{src}`
//!   (the original source image). Without it the encoded file is read as an
//!   image directly.
//!
//! Every call works in its own temporary directory, with files named
//! `{uuid}.{ext}`. Commands run through `sh -c`; substituted paths are
//! single-quoted.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use log::debug;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};
use crate::wavelet::{global_threshold, subband_threshold, ThresholdBudget, DEFAULT_LEVELS};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const MAX_BISECTION_PROBES: usize = 20;

/// Requested rate for one x-step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum RateTarget {
    /// `N:1` against the uncompressed size. Built-in codecs keep `1/N` of
    /// their coefficients; external codecs get `8·channels/N` bits per pixel.
    Ratio(f64),
    /// Bits per pixel of the encoded file (external codecs only).
    Bpp(f64),
    /// Quality parameter passed straight to an external encoder.
    Quality(f64),
}

impl RateTarget {
    pub fn value(&self) -> f64 {
        match *self {
            RateTarget::Ratio(v) | RateTarget::Bpp(v) | RateTarget::Quality(v) => v,
        }
    }

    pub fn with_value(&self, value: f64) -> RateTarget {
        match self {
            RateTarget::Ratio(_) => RateTarget::Ratio(value),
            RateTarget::Bpp(_) => RateTarget::Bpp(value),
            RateTarget::Quality(_) => RateTarget::Quality(value),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageContainer {
    Png,
    Pnm,
}

impl ImageContainer {
    fn extension(self, channels: usize) -> &'static str {
        match (self, channels) {
            (ImageContainer::Png, _) => "png",
            (ImageContainer::Pnm, 1) => "pgm",
            (ImageContainer::Pnm, _) => "ppm",
        }
    }
}

/// How to drive an external encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalCodec {
    pub encode: String,
    pub decode: Option<String>,
    /// Extension given to the encoded file (`{out}` of `encode`).
    pub encoded_extension: String,
    /// Container used for the source image.
    pub input_container: ImageContainer,
    /// Parent for per-call temporary directories (system default if `None`).
    pub work_dir: Option<PathBuf>,
    pub q_min: i64,
    pub q_max: i64,
    /// Whether a larger `q` means better quality (and larger files).
    pub higher_is_better: bool,
    pub timeout: Duration,
    /// Probe every `q` instead of bisecting.
    pub full_scan: bool,
}

impl ExternalCodec {
    pub fn new(encode: impl Into<String>) -> Self {
        Self {
            encode: encode.into(),
            decode: None,
            encoded_extension: "bin".into(),
            input_container: ImageContainer::Png,
            work_dir: None,
            q_min: 0,
            q_max: 100,
            higher_is_better: true,
            timeout: DEFAULT_TIMEOUT,
            full_scan: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for placeholder in ["{in}", "{out}", "{q}"] {
            if !self.encode.contains(placeholder) {
                return Err(Error::Config(format!("encode template lacks {placeholder}")));
            }
        }
        if let Some(decode) = &self.decode {
            if !decode.contains("{out}") {
                return Err(Error::Config("decode template lacks {out}".into()));
            }
        }
        if self.q_min > self.q_max {
            return Err(Error::Config(format!(
                "empty quality range [{}, {}]",
                self.q_min, self.q_max
            )));
        }
        Ok(())
    }

    /// Parameters from worst to best quality.
    fn worst_to_best(&self) -> Vec<i64> {
        let mut qs: Vec<i64> = (self.q_min..=self.q_max).collect();
        if !self.higher_is_better {
            qs.reverse();
        }
        qs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CodecKind {
    GlobalThreshold,
    SubbandThreshold,
    External(ExternalCodec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecHandle {
    pub kind: CodecKind,
    /// Wavelet levels for the built-in codecs.
    pub levels: usize,
}

impl CodecHandle {
    pub fn global_threshold() -> Self {
        Self {
            kind: CodecKind::GlobalThreshold,
            levels: DEFAULT_LEVELS,
        }
    }

    pub fn subband_threshold() -> Self {
        Self {
            kind: CodecKind::SubbandThreshold,
            levels: DEFAULT_LEVELS,
        }
    }

    pub fn external(codec: ExternalCodec) -> Self {
        Self {
            kind: CodecKind::External(codec),
            levels: DEFAULT_LEVELS,
        }
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self.kind, CodecKind::External(_))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            CodecKind::External(ext) => ext.validate(),
            _ if self.levels == 0 => Err(Error::Config("wavelet levels must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// Output of one x-step.
#[derive(Clone, Debug)]
pub struct CompressResult {
    pub decoded: Image,
    /// Kept fraction for built-in codecs, bits per pixel for external ones.
    pub achieved_rate: f64,
    /// Quality parameter (external) or threshold count (built-in) used.
    pub codec_parameter: f64,
    /// Encoded size (external codecs only).
    pub bytes: Option<u64>,
}

pub fn compress_to_budget(codec: &CodecHandle, img: &Image, budget: RateTarget) -> Result<CompressResult> {
    codec.validate()?;
    let value = budget.value();
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter(format!("budget must be positive, got {value}")));
    }
    match &codec.kind {
        CodecKind::GlobalThreshold | CodecKind::SubbandThreshold => {
            let RateTarget::Ratio(ratio) = budget else {
                return Err(Error::InvalidParameter(
                    "built-in codecs take a compression ratio".into(),
                ));
            };
            let tb = ThresholdBudget::from_ratio(ratio)?;
            let outcome = if matches!(codec.kind, CodecKind::GlobalThreshold) {
                global_threshold(img, tb, codec.levels)?
            } else {
                subband_threshold(img, tb, codec.levels)?
            };
            Ok(CompressResult {
                achieved_rate: outcome.kept_fraction(),
                codec_parameter: outcome.kept as f64,
                decoded: outcome.decoded,
                bytes: None,
            })
        }
        CodecKind::External(ext) => {
            let bpp = match budget {
                RateTarget::Quality(q) => {
                    let q = q.round() as i64;
                    let probe = probe_external(ext, img, q)?;
                    return Ok(probe.into_result(img, q));
                }
                RateTarget::Ratio(r) => 8.0 * img.channels() as f64 / r,
                RateTarget::Bpp(b) => b,
            };
            search_quality(ext, img, bpp)
        }
    }
}

/// Decoded image and encoded size for one quality setting.
#[derive(Clone, Debug)]
pub struct Probe {
    pub decoded: Image,
    pub bytes: u64,
}

impl Probe {
    fn bpp(&self, img: &Image) -> f64 {
        self.bytes as f64 * 8.0 / img.pixel_count() as f64
    }

    fn into_result(self, img: &Image, q: i64) -> CompressResult {
        CompressResult {
            achieved_rate: self.bpp(img),
            codec_parameter: q as f64,
            bytes: Some(self.bytes),
            decoded: self.decoded,
        }
    }
}

fn search_quality(ext: &ExternalCodec, img: &Image, bpp_budget: f64) -> Result<CompressResult> {
    let qs = ext.worst_to_best();
    let mut probes: Vec<Option<Probe>> = vec![None; qs.len()];
    let probe_at = |i: usize, probes: &mut Vec<Option<Probe>>| -> Result<f64> {
        if probes[i].is_none() {
            probes[i] = Some(probe_external(ext, img, qs[i])?);
        }
        Ok(probes[i].as_ref().expect("just probed").bpp(img))
    };

    let best = if ext.full_scan {
        let mut best = None;
        let mut smallest = f64::INFINITY;
        for i in 0..qs.len() {
            let rate = probe_at(i, &mut probes)?;
            smallest = smallest.min(rate);
            if rate <= bpp_budget {
                best = Some(i);
            }
        }
        best.ok_or(Error::BudgetInfeasible {
            requested: bpp_budget,
            smallest_achievable: smallest,
        })?
    } else {
        // invariant: lo feasible, hi infeasible
        let worst_rate = probe_at(0, &mut probes)?;
        if worst_rate > bpp_budget {
            return Err(Error::BudgetInfeasible {
                requested: bpp_budget,
                smallest_achievable: worst_rate,
            });
        }
        let last = qs.len() - 1;
        if probe_at(last, &mut probes)? <= bpp_budget {
            last
        } else {
            let (mut lo, mut hi) = (0, last);
            let mut count = 2;
            while hi - lo > 1 && count < MAX_BISECTION_PROBES {
                let mid = lo + (hi - lo) / 2;
                if probe_at(mid, &mut probes)? <= bpp_budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
                count += 1;
            }
            lo
        }
    };
    debug!("external codec: q={} for budget {bpp_budget} bpp", qs[best]);
    let probe = probes[best].take().expect("chosen parameter was probed");
    Ok(probe.into_result(img, qs[best]))
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn substitute(template: &str, pairs: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(key, value);
    }
    out
}

fn run_command(command: &str, dir: &Path, timeout: Duration) -> Result<()> {
    let stderr_path = dir.join(format!("{}.stderr", uuid::Uuid::new_v4()));
    let stderr_file = File::create(&stderr_path)?;
    debug!("running: {command}");
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::from(stderr_file))
        .spawn()?;
    let status = match child.wait_timeout(timeout)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Timeout(timeout));
        }
    };
    if !status.success() {
        let stderr = std::fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(Error::ExternalFailed {
            status: status.to_string(),
            stderr: stderr.trim().to_string(),
        });
    }
    Ok(())
}

/// Encode at `q`, measure the encoded size, decode and load the result.
pub fn probe_external(ext: &ExternalCodec, img: &Image, q: i64) -> Result<Probe> {
    ext.validate()?;
    let tmp = match &ext.work_dir {
        Some(dir) => tempfile::Builder::new().prefix("warpcodec-").tempdir_in(dir)?,
        None => tempfile::Builder::new().prefix("warpcodec-").tempdir()?,
    };
    let dir = tmp.path();
    let src = dir.join(format!(
        "{}.{}",
        uuid::Uuid::new_v4(),
        ext.input_container.extension(img.channels())
    ));
    let encoded = dir.join(format!("{}.{}", uuid::Uuid::new_v4(), ext.encoded_extension));
    save_image(img, &src)?;

    let encode = substitute(
        &ext.encode,
        &[
            ("{in}", shell_quote(&src)),
            ("{out}", shell_quote(&encoded)),
            ("{q}", q.to_string()),
        ],
    );
    run_command(&encode, dir, ext.timeout)?;
    let bytes = std::fs::metadata(&encoded)
        .map_err(|_| Error::MissingOutput(encoded.clone()))?
        .len();

    let decoded_path = match &ext.decode {
        Some(template) => {
            let out = dir.join(format!("{}.png", uuid::Uuid::new_v4()));
            let decode = substitute(
                template,
                &[
                    ("{in}", shell_quote(&encoded)),
                    ("{out}", shell_quote(&out)),
                    ("{src}", shell_quote(&src)),
                    ("{q}", q.to_string()),
                ],
            );
            run_command(&decode, dir, ext.timeout)?;
            if !out.exists() {
                return Err(Error::MissingOutput(out));
            }
            out
        }
        None => encoded,
    };
    let decoded = load_image(&decoded_path)?;
    decoded.check_same_shape(img, "decoded image")?;
    Ok(Probe { decoded, bytes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{compress_global_threshold, compress_subband_threshold};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::gray(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn builtin_dispatch_matches_direct_calls() {
        let img = random_image(1, 32, 24);
        let b = ThresholdBudget::from_ratio(8.0).unwrap();
        let g = compress_to_budget(&CodecHandle::global_threshold(), &img, RateTarget::Ratio(8.0)).unwrap();
        assert_eq!(g.decoded, compress_global_threshold(&img, b, DEFAULT_LEVELS).unwrap());
        assert!(g.achieved_rate <= 1.0 / 8.0);
        let s = compress_to_budget(&CodecHandle::subband_threshold(), &img, RateTarget::Ratio(8.0)).unwrap();
        assert_eq!(s.decoded, compress_subband_threshold(&img, b, DEFAULT_LEVELS).unwrap());
    }

    #[test]
    fn lossless_ratio_is_identity() {
        let img = random_image(2, 16, 16);
        let r = compress_to_budget(&CodecHandle::global_threshold(), &img, RateTarget::Ratio(1.0)).unwrap();
        let diff = img
            .plane(0)
            .iter()
            .zip(r.decoded.plane(0))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9);
        assert_eq!(r.achieved_rate, 1.0);
    }

    #[test]
    fn builtin_rejects_non_ratio_budgets() {
        let img = random_image(2, 16, 16);
        assert!(compress_to_budget(&CodecHandle::global_threshold(), &img, RateTarget::Bpp(1.0)).is_err());
        assert!(compress_to_budget(&CodecHandle::global_threshold(), &img, RateTarget::Ratio(0.0)).is_err());
    }

    #[test]
    fn template_validation() {
        assert!(ExternalCodec::new("cp {in} {out}").validate().is_err());
        assert!(ExternalCodec::new("cp {in} {out} # {q}").validate().is_ok());
        let mut bad = ExternalCodec::new("cp {in} {out} # {q}");
        bad.q_min = 5;
        bad.q_max = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn quoting_survives_spaces_and_quotes() {
        assert_eq!(shell_quote(Path::new("/a b/c'd")), r"'/a b/c'\''d'");
    }

    #[test]
    fn worst_to_best_ordering() {
        let mut e = ExternalCodec::new("x {in} {out} {q}");
        e.q_min = 1;
        e.q_max = 3;
        assert_eq!(e.worst_to_best(), vec![1, 2, 3]);
        e.higher_is_better = false;
        assert_eq!(e.worst_to_best(), vec![3, 2, 1]);
    }
}
