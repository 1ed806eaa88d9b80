//! Planar floating-point rasters and the per-pixel arithmetic shared by the
//! codecs, the flow solver and the metrics.

use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Planar raster with 1 or 3 channels stored as row-major `f64` planes.
///
/// Samples read from disk lie in `[0, 1]`; intermediate results (for example
/// an inverse wavelet transform of a thresholded pyramid) may leave that
/// range and are only clamped when written out or warped.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    planes: Vec<Vec<f64>>,
}

impl Image {
    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroSize);
        }
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        for (c, p) in planes.iter().enumerate() {
            if p.len() != width * height {
                return Err(Error::InvalidImage(format!(
                    "plane {c} has {} samples, expected {}",
                    p.len(),
                    width * height
                )));
            }
            if p.iter().any(|s| !s.is_finite()) {
                return Err(Error::InvalidImage(format!("plane {c} has non-finite samples")));
            }
        }
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    /// Single-channel image from one plane.
    pub fn gray(width: usize, height: usize, plane: Vec<f64>) -> Result<Self> {
        Self::from_planes(width, height, vec![plane])
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_planes(width, height, vec![vec![value; width * height]; channels])
    }

    /// Build a gray image by evaluating `f(col, row)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut plane = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                plane.push(f(col, row));
            }
        }
        Self::gray(width, height, plane)
    }

    /// Samples are `byte / 255`.
    pub fn from_bytes(width: usize, height: usize, channels: usize, interleaved: &[u8]) -> Result<Self> {
        if interleaved.len() != width * height * channels {
            return Err(Error::InvalidImage("byte buffer length does not match shape".into()));
        }
        let mut planes = vec![Vec::with_capacity(width * height); channels];
        for px in interleaved.chunks_exact(channels) {
            for (plane, &b) in planes.iter_mut().zip(px) {
                plane.push(f64::from(b) / 255.0);
            }
        }
        Self::from_planes(width, height, planes)
    }

    /// Interleaved 8-bit samples, `round_half_up(clamp(s) * 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(n * self.channels());
        for i in 0..n {
            for plane in &self.planes {
                out.push(sample_to_byte(plane[i]));
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    /// Total sample count (pixels × channels).
    pub fn len(&self) -> usize {
        self.width * self.height * self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        &self.planes[channel]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.planes[channel]
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Vec<f64>> {
        self.planes
    }

    #[inline]
    pub fn get(&self, channel: usize, col: usize, row: usize) -> f64 {
        self.planes[channel][row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, col: usize, row: usize, value: f64) {
        self.planes[channel][row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels() == other.channels()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width,
                self.height,
                self.channels(),
                other.width,
                other.height,
                other.channels()
            )))
        }
    }

    /// Copy with every sample clamped to `[0, 1]`.
    pub fn clamped(&self) -> Image {
        let planes = self
            .planes
            .iter()
            .map(|p| p.iter().map(|s| s.clamp(0.0, 1.0)).collect())
            .collect();
        Image {
            width: self.width,
            height: self.height,
            planes,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        let planes = self.planes.iter().map(|p| p.iter().map(|&s| f(s)).collect()).collect();
        Image {
            width: self.width,
            height: self.height,
            planes,
        }
    }
}

#[inline]
fn sample_to_byte(s: f64) -> u8 {
    (s.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Reads a PNG (8/16-bit, gray or RGB) or binary PGM/PPM file.
///
/// Alpha channels are dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let unreadable = |reason: String| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(Error::UnsupportedFormat(format!("unrecognized file {}", path.display()))),
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        other => unreadable(other.to_string()),
    })?;
    from_dynamic(decoded)
}

fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroSize);
    }
    let has_color = img.color().has_color();
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    let channels = if has_color { 3 } else { 1 };
    let planes_from = |samples: Vec<f64>| -> Vec<Vec<f64>> {
        let mut planes = vec![Vec::with_capacity(w * h); channels];
        for px in samples.chunks_exact(channels) {
            for (plane, &s) in planes.iter_mut().zip(px) {
                plane.push(s);
            }
        }
        planes
    };
    let samples: Vec<f64> = match (has_color, sixteen) {
        (false, false) => img.to_luma8().into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect(),
        (true, false) => img.to_rgb8().into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect(),
        (false, true) => img.to_luma16().into_raw().into_iter().map(|b| f64::from(b) / 65535.0).collect(),
        (true, true) => img.to_rgb16().into_raw().into_iter().map(|b| f64::from(b) / 65535.0).collect(),
    };
    Image::from_planes(w, h, planes_from(samples))
}

/// Writes 8-bit samples; `.ppm`/`.pgm`/`.pnm` produce binary PNM, anything
/// else PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = img.to_bytes();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = if img.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer sized from image"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer sized from image"))
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let format = match ext.as_deref() {
        Some("ppm" | "pgm" | "pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    dynamic
        .save_with_format(path, format)
        .map_err(|e| Error::UnwritablePath {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Rec. 601 luminance; a 1-channel input is copied.
pub fn luminance(img: &Image) -> Image {
    if img.channels() == 1 {
        return img.clone();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let plane = (0..img.pixel_count())
        .map(|i| LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i])
        .collect();
    Image {
        width: img.width(),
        height: img.height(),
        planes: vec![plane],
    }
}

/// Sum of squared differences over all samples, accumulated in a fixed
/// sequential order.
pub fn ssd(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssd")?;
    Ok(a
        .planes
        .iter()
        .zip(&b.planes)
        .map(|(pa, pb)| pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum())
}

/// PSNR in dB for peak 1.0 over `samples` samples. Infinite for a zero SSD.
pub fn psnr_from_ssd(ssd: f64, samples: usize) -> f64 {
    if ssd <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (samples as f64 / ssd).log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_ssd(ssd(a, b)?, a.len()))
}

/// Aggregate quality figures for one compressed result against its input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ssd: f64,
    /// `10·log10(N / ssd)`; serialized as `null` when infinite.
    #[serde(with = "finite_or_null")]
    pub psnr: f64,
    pub dassd: f64,
    /// The weighted smoothness part of `dassd` (`λ·ψ`).
    pub flow_penalty: f64,
    pub achieved_rate: f64,
    pub iterations: usize,
}

pub(crate) mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
