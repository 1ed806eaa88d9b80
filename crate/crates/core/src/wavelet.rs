//! Orthonormal Haar pyramid and the two thresholding codecs built on it.
//!
//! Odd-length lines are extended by half-sample symmetry. For Haar that
//! makes the trailing pair `(x, x)`, whose detail coefficient is always
//! zero; it is dropped and the lone lowpass sample is carried through with
//! unit gain, so each level stays orthonormal and the total coefficient
//! count equals the sample count.
//!
//! Coefficients have a canonical linear order used for tie-breaking: for
//! each channel, the top-level LL band, then detail levels from coarsest to
//! finest, each as HL, LH, HH, every band row-major.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_LEVELS: usize = 4;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One rectangular coefficient array.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Band {
    fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    fn energy(&self) -> f64 {
        self.data.iter().map(|c| c * c).sum()
    }
}

/// Detail bands of one decomposition level. `hl` holds horizontal
/// high-pass / vertical low-pass, `lh` the transpose, `hh` both high-pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailLevel {
    pub hl: Band,
    pub lh: Band,
    pub hh: Band,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPyramid {
    pub ll: Band,
    /// `details[0]` is the finest level.
    pub details: Vec<DetailLevel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub width: usize,
    pub height: usize,
    pub levels: usize,
    pub channels: Vec<ChannelPyramid>,
}

impl WaveletPyramid {
    pub fn coefficient_count(&self) -> usize {
        self.channels
            .iter()
            .map(|ch| {
                ch.ll.data.len()
                    + ch
                        .details
                        .iter()
                        .map(|d| d.hl.data.len() + d.lh.data.len() + d.hh.data.len())
                        .sum::<usize>()
            })
            .sum()
    }

    /// All bands in canonical order.
    fn bands(&self) -> impl Iterator<Item = &Band> {
        self.channels.iter().flat_map(|ch| {
            std::iter::once(&ch.ll).chain(
                ch.details
                    .iter()
                    .rev()
                    .flat_map(|d| [&d.hl, &d.lh, &d.hh]),
            )
        })
    }

    fn bands_mut(&mut self) -> impl Iterator<Item = &mut Band> {
        self.channels.iter_mut().flat_map(|ch| {
            std::iter::once(&mut ch.ll).chain(
                ch.details
                    .iter_mut()
                    .rev()
                    .flat_map(|d| [&mut d.hl, &mut d.lh, &mut d.hh]),
            )
        })
    }

    /// Flattened coefficients in canonical order.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coefficient_count());
        for band in self.bands() {
            out.extend_from_slice(&band.data);
        }
        out
    }

    /// Overwrite every coefficient from a canonical-order slice.
    pub fn set_coefficients(&mut self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.coefficient_count() {
            return Err(Error::MalformedPyramid(format!(
                "expected {} coefficients, got {}",
                self.coefficient_count(),
                coeffs.len()
            )));
        }
        let mut offset = 0;
        for band in self.bands_mut() {
            let n = band.data.len();
            band.data.copy_from_slice(&coeffs[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

fn half_up(n: usize) -> usize {
    n.div_ceil(2)
}

fn forward_line(src: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let low = half_up(n);
    for i in 0..n / 2 {
        let (a, b) = (src[2 * i], src[2 * i + 1]);
        dst[i] = (a + b) * INV_SQRT2;
        dst[low + i] = (a - b) * INV_SQRT2;
    }
    if n % 2 == 1 {
        dst[low - 1] = src[n - 1];
    }
}

fn inverse_line(src: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let low = half_up(n);
    for i in 0..n / 2 {
        let (l, h) = (src[i], src[low + i]);
        dst[2 * i] = (l + h) * INV_SQRT2;
        dst[2 * i + 1] = (l - h) * INV_SQRT2;
    }
    if n % 2 == 1 {
        dst[n - 1] = src[low - 1];
    }
}

/// One separable level in place on the top-left `w`×`h` region of a
/// `stride`-wide buffer: rows, then columns.
fn forward_level(buf: &mut [f64], stride: usize, w: usize, h: usize) {
    let mut line = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    for row in 0..h {
        let start = row * stride;
        line[..w].copy_from_slice(&buf[start..start + w]);
        forward_line(&line[..w], &mut out[..w]);
        buf[start..start + w].copy_from_slice(&out[..w]);
    }
    for col in 0..w {
        for row in 0..h {
            line[row] = buf[row * stride + col];
        }
        forward_line(&line[..h], &mut out[..h]);
        for row in 0..h {
            buf[row * stride + col] = out[row];
        }
    }
}

fn inverse_level(buf: &mut [f64], stride: usize, w: usize, h: usize) {
    let mut line = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    for col in 0..w {
        for row in 0..h {
            line[row] = buf[row * stride + col];
        }
        inverse_line(&line[..h], &mut out[..h]);
        for row in 0..h {
            buf[row * stride + col] = out[row];
        }
    }
    for row in 0..h {
        let start = row * stride;
        line[..w].copy_from_slice(&buf[start..start + w]);
        inverse_line(&line[..w], &mut out[..w]);
        buf[start..start + w].copy_from_slice(&out[..w]);
    }
}

fn copy_region(buf: &[f64], stride: usize, x0: usize, y0: usize, w: usize, h: usize) -> Band {
    let mut band = Band::zeros(w, h);
    for row in 0..h {
        let src = (y0 + row) * stride + x0;
        band.data[row * w..(row + 1) * w].copy_from_slice(&buf[src..src + w]);
    }
    band
}

fn paste_region(buf: &mut [f64], stride: usize, x0: usize, y0: usize, band: &Band) {
    for row in 0..band.height {
        let dst = (y0 + row) * stride + x0;
        buf[dst..dst + band.width].copy_from_slice(&band.data[row * band.width..(row + 1) * band.width]);
    }
}

/// Region sizes `(w, h)` before each level, finest first.
fn level_dims(width: usize, height: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(levels);
    let (mut w, mut h) = (width, height);
    for _ in 0..levels {
        dims.push((w, h));
        w = half_up(w);
        h = half_up(h);
    }
    dims
}

pub fn check_levels(width: usize, height: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be at least 1".into()));
    }
    let needed = 1usize.checked_shl(levels as u32).unwrap_or(usize::MAX);
    if width < needed || height < needed {
        return Err(Error::LevelsTooLarge {
            levels,
            needed,
            width,
            height,
        });
    }
    Ok(())
}

/// Multilevel orthonormal Haar decomposition of every channel.
pub fn dwt_forward(img: &Image, levels: usize) -> Result<WaveletPyramid> {
    let (width, height) = (img.width(), img.height());
    check_levels(width, height, levels)?;
    let dims = level_dims(width, height, levels);
    let channels = img
        .planes()
        .iter()
        .map(|plane| {
            let mut buf = plane.clone();
            let mut details = Vec::with_capacity(levels);
            for &(w, h) in &dims {
                forward_level(&mut buf, width, w, h);
                let (lw, lh) = (half_up(w), half_up(h));
                details.push(DetailLevel {
                    hl: copy_region(&buf, width, lw, 0, w - lw, lh),
                    lh: copy_region(&buf, width, 0, lh, lw, h - lh),
                    hh: copy_region(&buf, width, lw, lh, w - lw, h - lh),
                });
            }
            let (w, h) = dims[levels - 1];
            ChannelPyramid {
                ll: copy_region(&buf, width, 0, 0, half_up(w), half_up(h)),
                details,
            }
        })
        .collect();
    Ok(WaveletPyramid {
        width,
        height,
        levels,
        channels,
    })
}

fn check_band(band: &Band, w: usize, h: usize, what: &str) -> Result<()> {
    if band.width != w || band.height != h || band.data.len() != w * h {
        return Err(Error::MalformedPyramid(format!(
            "{what} is {}x{} ({} samples), expected {w}x{h}",
            band.width,
            band.height,
            band.data.len()
        )));
    }
    Ok(())
}

/// Reconstruction. The output is not clamped.
pub fn dwt_inverse(pyr: &WaveletPyramid) -> Result<Image> {
    let (width, height, levels) = (pyr.width, pyr.height, pyr.levels);
    if width == 0 || height == 0 {
        return Err(Error::MalformedPyramid("zero-size pyramid".into()));
    }
    if levels == 0 {
        return Err(Error::MalformedPyramid("pyramid has no levels".into()));
    }
    if pyr.channels.len() != 1 && pyr.channels.len() != 3 {
        return Err(Error::MalformedPyramid(format!("{} channels", pyr.channels.len())));
    }
    let dims = level_dims(width, height, levels);
    let mut planes = Vec::with_capacity(pyr.channels.len());
    for ch in &pyr.channels {
        if ch.details.len() != levels {
            return Err(Error::MalformedPyramid(format!(
                "{} detail levels, expected {levels}",
                ch.details.len()
            )));
        }
        let (w, h) = dims[levels - 1];
        check_band(&ch.ll, half_up(w), half_up(h), "LL")?;
        let mut buf = vec![0.0; width * height];
        paste_region(&mut buf, width, 0, 0, &ch.ll);
        for (level, &(w, h)) in dims.iter().enumerate().rev() {
            let d = &ch.details[level];
            let (lw, lh) = (half_up(w), half_up(h));
            check_band(&d.hl, w - lw, lh, "HL")?;
            check_band(&d.lh, lw, h - lh, "LH")?;
            check_band(&d.hh, w - lw, h - lh, "HH")?;
            paste_region(&mut buf, width, lw, 0, &d.hl);
            paste_region(&mut buf, width, 0, lh, &d.lh);
            paste_region(&mut buf, width, lw, lh, &d.hh);
            inverse_level(&mut buf, width, w, h);
        }
        planes.push(buf);
    }
    Image::from_planes(width, height, planes)
}

/// Fraction of wavelet coefficients a built-in codec may keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdBudget {
    kept_fraction: f64,
}

impl ThresholdBudget {
    pub fn new(kept_fraction: f64) -> Result<Self> {
        if !(kept_fraction > 0.0 && kept_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "kept fraction must lie in (0, 1], got {kept_fraction}"
            )));
        }
        Ok(Self { kept_fraction })
    }

    /// `N:1` keeps `1/N` of the coefficients.
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !(ratio >= 1.0) || !ratio.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "compression ratio must be at least 1, got {ratio}"
            )));
        }
        Self::new(1.0 / ratio)
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept_fraction
    }

    pub fn ratio(&self) -> f64 {
        1.0 / self.kept_fraction
    }

    /// `ceil(kept_fraction · total)`, at least 1. A 1e-9 guard keeps exact
    /// products such as `(1/40)·4000` from rounding up to 101.
    pub fn kept_count(&self, total: usize) -> usize {
        let raw = self.kept_fraction * total as f64;
        ((raw - 1e-9).ceil() as usize).clamp(1, total.max(1))
    }
}

/// Decoded image plus how many coefficients survived.
#[derive(Clone, Debug)]
pub struct ThresholdOutcome {
    pub decoded: Image,
    pub kept: usize,
    pub total: usize,
}

impl ThresholdOutcome {
    pub fn kept_fraction(&self) -> f64 {
        self.kept as f64 / self.total as f64
    }
}

/// Indices of the `k` largest magnitudes, ties going to the lower index.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |&a: &usize, &b: &usize| -> Ordering {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx
}

/// Keep the `K` largest-magnitude coefficients across every band and channel.
pub fn compress_global_threshold(img: &Image, budget: ThresholdBudget, levels: usize) -> Result<Image> {
    Ok(global_threshold(img, budget, levels)?.decoded)
}

pub fn global_threshold(img: &Image, budget: ThresholdBudget, levels: usize) -> Result<ThresholdOutcome> {
    let mut pyr = dwt_forward(img, levels)?;
    let coeffs = pyr.coefficients();
    let total = coeffs.len();
    let k = budget.kept_count(total);
    let mut kept = vec![0.0; total];
    for i in top_k_indices(&coeffs, k) {
        kept[i] = coeffs[i];
    }
    pyr.set_coefficients(&kept)?;
    Ok(ThresholdOutcome {
        decoded: dwt_inverse(&pyr)?,
        kept: k,
        total,
    })
}

/// Per-band thresholding: the LL band is kept whole and the remaining
/// budget is split across detail bands in proportion to their energy.
pub fn compress_subband_threshold(img: &Image, budget: ThresholdBudget, levels: usize) -> Result<Image> {
    Ok(subband_threshold(img, budget, levels)?.decoded)
}

pub fn subband_threshold(img: &Image, budget: ThresholdBudget, levels: usize) -> Result<ThresholdOutcome> {
    let mut pyr = dwt_forward(img, levels)?;
    let total = pyr.coefficient_count();
    let k = budget.kept_count(total);
    if k >= total {
        return Ok(ThresholdOutcome {
            decoded: dwt_inverse(&pyr)?,
            kept: total,
            total,
        });
    }
    let ll_count: usize = pyr.channels.iter().map(|ch| ch.ll.data.len()).sum();
    let detail_budget = k.saturating_sub(ll_count) as f64;
    let energy_total: f64 = pyr
        .channels
        .iter()
        .flat_map(|ch| ch.details.iter())
        .map(|d| d.hl.energy() + d.lh.energy() + d.hh.energy())
        .sum();

    let mut kept = ll_count;
    for ch in &mut pyr.channels {
        for d in &mut ch.details {
            for band in [&mut d.hl, &mut d.lh, &mut d.hh] {
                if band.data.is_empty() {
                    continue;
                }
                if energy_total <= 0.0 {
                    // every detail coefficient is already zero
                    continue;
                }
                let share = (detail_budget * band.energy() / energy_total).round() as usize;
                let k_band = share.max(1).min(band.data.len());
                let mut out = vec![0.0; band.data.len()];
                for i in top_k_indices(&band.data, k_band) {
                    out[i] = band.data[i];
                }
                band.data = out;
                kept += k_band;
            }
        }
    }
    Ok(ThresholdOutcome {
        decoded: dwt_inverse(&pyr)?,
        kept,
        total,
    })
}
