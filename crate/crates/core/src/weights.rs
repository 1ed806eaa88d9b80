//! Spatially varying smoothness weights `w = 1 + α·(G_σ ∗ E)`.
//!
//! `E` is a normalized Sobel edge magnitude of the input's luminance.

use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, reflect, resize_bilinear};
use crate::image::{luminance, Image};

pub const DEFAULT_SIGMA: f64 = 10.0;
const EDGE_PRESMOOTH_SIGMA: f64 = 1.0;
const EDGE_PERCENTILE: f64 = 0.99;

/// Per-pixel regularization weights, all `≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    weights: Vec<f64>,
    alpha: f64,
    sigma: f64,
}

impl WeightMap {
    /// `w ≡ 1`.
    pub fn constant(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            weights: vec![1.0; width * height],
            alpha: 0.0,
            sigma: 0.0,
        }
    }

    pub fn from_weights(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "weight map has {} entries, expected {}",
                weights.len(),
                width * height
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
        }
        Ok(Self {
            width,
            height,
            weights,
            alpha: f64::NAN,
            sigma: f64::NAN,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Same map scaled by `factor`; used by tests of the energy's linearity.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        Self {
            width,
            height,
            weights: resize_bilinear(&self.weights, self.width, self.height, width, height),
            alpha: self.alpha,
            sigma: self.sigma,
        }
    }

    /// Gray visualization with `w` mapped linearly from `[1, max]` onto `[0, 1]`.
    pub fn to_image(&self) -> Image {
        let max = self.weights.iter().copied().fold(1.0, f64::max);
        let span = (max - 1.0).max(f64::MIN_POSITIVE);
        let plane = self
            .weights
            .iter()
            .map(|w| if max > 1.0 { (w - 1.0) / span } else { 0.0 })
            .collect();
        Image::gray(self.width, self.height, plane).expect("weight map has a valid shape")
    }
}

fn sobel_magnitude(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    let at = |c: isize, r: isize| plane[reflect(r, height) * width + reflect(c, width)];
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height as isize {
        for col in 0..width as isize {
            let gx = (at(col + 1, row - 1) + 2.0 * at(col + 1, row) + at(col + 1, row + 1))
                - (at(col - 1, row - 1) + 2.0 * at(col - 1, row) + at(col - 1, row + 1));
            let gy = (at(col - 1, row + 1) + 2.0 * at(col, row + 1) + at(col + 1, row + 1))
                - (at(col - 1, row - 1) + 2.0 * at(col, row - 1) + at(col + 1, row - 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Nearest-rank percentile.
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Edge strength in `[0, 1]`: Sobel magnitude of the σ=1 smoothed luminance,
/// divided by its 99th percentile and clamped.
pub fn edge_map(y: &Image) -> Image {
    let (w, h) = (y.width(), y.height());
    let lum = luminance(y);
    let smooth = gaussian_blur(lum.plane(0), w, h, EDGE_PRESMOOTH_SIGMA);
    let mag = sobel_magnitude(&smooth, w, h);
    let mut scale = percentile(&mag, EDGE_PERCENTILE);
    if scale <= 0.0 {
        scale = mag.iter().copied().fold(0.0, f64::max);
    }
    let plane = if scale > 0.0 {
        mag.iter().map(|m| (m / scale).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; w * h]
    };
    Image::gray(w, h, plane).expect("edge map has the input's shape")
}

/// `w = 1 + α · gaussian_blur(E, σ)`.
pub fn build_weight_map(y: &Image, alpha: f64, sigma: f64) -> Result<WeightMap> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let edges = edge_map(y);
    Ok(weights_from_edges(edges.plane(0), y.width(), y.height(), alpha, sigma))
}

pub(crate) fn weights_from_edges(edges: &[f64], width: usize, height: usize, alpha: f64, sigma: f64) -> WeightMap {
    let blurred = gaussian_blur(edges, width, height, sigma);
    WeightMap {
        width,
        height,
        weights: blurred.iter().map(|g| 1.0 + alpha * g.max(0.0)).collect(),
        alpha,
        sigma,
    }
}
