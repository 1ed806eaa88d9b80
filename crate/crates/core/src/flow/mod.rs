//! Dense deformation fields and the weighted Horn–Schunck flow energy
//!
//! ```text
//! E(u, v) = Σ (x − T{y})²  +  λ' · Σ w·(|∇u|² + |∇v|²)
//! ```
//!
//! with forward differences and Neumann boundaries (the difference that
//! would leave the raster is zero). `λ` is quoted against 8-bit intensities,
//! as is customary for optical flow; since samples here live in `[0, 1]`,
//! the energy uses `λ' = λ / 255²`.

mod flo;
mod gradient;
mod solver;

pub use flo::{read_flo, write_flo, FLO_MAGIC};
pub use gradient::{flow_gradient, flow_gradient_check};
pub use solver::{estimate_flow, estimate_flow_traced, FlowTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ssd, Image};
use crate::warp::warp;
use crate::weights::WeightMap;

pub const DEFAULT_LAMBDA: f64 = 65.0;

/// Intensity range `λ` is expressed against.
pub const INTENSITY_SCALE: f64 = 255.0;

/// Weight applied to the smoothness sum for samples in `[0, 1]`.
#[inline]
pub fn effective_lambda(lambda: f64) -> f64 {
    lambda / (INTENSITY_SCALE * INTENSITY_SCALE)
}

/// Per-pixel displacement `(u, v)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "flow components must have {} entries",
                width * height
            )));
        }
        if u.iter().chain(&v).any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("flow must be finite".into()));
        }
        Ok(Self { width, height, u, v })
    }

    /// The identity deformation.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn is_identity(&self) -> bool {
        self.u.iter().chain(&self.v).all(|&d| d == 0.0)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f64::max)
    }

    /// Resample onto a `width`×`height` grid, rescaling the displacements.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let resize = |p: &[f64]| crate::filter::resize_bilinear(p, self.width, self.height, width, height);
        Self {
            width,
            height,
            u: resize(&self.u).into_iter().map(|d| d * sx).collect(),
            v: resize(&self.v).into_iter().map(|d| d * sy).collect(),
        }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.u, &mut self.v)
    }

    /// `self + t·(other − self)`.
    pub(crate) fn lerp(&self, other: &FlowField, t: f64) -> FlowField {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect();
        FlowField {
            width: self.width,
            height: self.height,
            u: mix(&self.u, &other.u),
            v: mix(&self.v, &other.v),
        }
    }
}

/// Solver configuration. `lambda` is quoted against 8-bit intensities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub lambda: f64,
    pub pyramid_scale: f64,
    pub min_size: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub solver_iterations: usize,
    /// Robust Charbonnier data term; off keeps the objective quadratic.
    pub charbonnier: bool,
    pub charbonnier_eps: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            pyramid_scale: 0.5,
            min_size: 16,
            outer_iterations: 5,
            inner_iterations: 3,
            solver_iterations: 30,
            charbonnier: false,
            charbonnier_eps: 1e-3,
        }
    }
}

impl FlowParams {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pyramid scale must lie in (0, 1), got {}",
                self.pyramid_scale
            )));
        }
        if self.min_size == 0 {
            return Err(Error::InvalidParameter("min_size must be positive".into()));
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(Error::InvalidParameter("charbonnier_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEnergy {
    pub data_term: f64,
    pub smoothness_term: f64,
    pub total: f64,
}

pub(crate) fn check_flow_inputs(y: &Image, x: &Image, flow: &FlowField, w: &WeightMap) -> Result<()> {
    x.check_same_shape(y, "flow inputs")?;
    let dims = (y.width(), y.height());
    if (flow.width(), flow.height()) != dims || (w.width(), w.height()) != dims {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{}, flow {}x{}, weights {}x{}",
            dims.0,
            dims.1,
            flow.width(),
            flow.height(),
            w.width(),
            w.height()
        )));
    }
    Ok(())
}

/// `Σ w·(|∇u|² + |∇v|²)`, forward differences anchored at the pixel whose
/// weight is used.
pub fn smoothness(flow: &FlowField, w: &WeightMap) -> f64 {
    let (width, height) = (flow.width(), flow.height());
    let weights = w.weights();
    let mut total = 0.0;
    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            let mut g = 0.0;
            for comp in [flow.u(), flow.v()] {
                if col + 1 < width {
                    let d = comp[i + 1] - comp[i];
                    g += d * d;
                }
                if row + 1 < height {
                    let d = comp[i + width] - comp[i];
                    g += d * d;
                }
            }
            total += weights[i] * g;
        }
    }
    total
}

/// Energy of warping `y` onto `x` with `flow`.
pub fn flow_energy(y: &Image, x: &Image, flow: &FlowField, w: &WeightMap, lambda: f64) -> Result<FlowEnergy> {
    check_flow_inputs(y, x, flow, w)?;
    let data_term = ssd(x, &warp(y, flow)?)?;
    let smoothness_term = smoothness(flow, w);
    Ok(FlowEnergy {
        data_term,
        smoothness_term,
        total: data_term + effective_lambda(lambda) * smoothness_term,
    })
}
