//! Backward warping with Catmull–Rom bicubic interpolation.
//!
//! `T{y}(ξ, η) = y(ξ + u, η + v)`: a positive `u` moves the sampling
//! location to the right. Source coordinates are clamped to the raster and
//! the result is clamped to `[0, 1]`.

use crate::error::Result;
use crate::flow::FlowField;
use crate::image::Image;

/// Catmull–Rom weights for taps at offsets −1, 0, 1, 2 from `floor(x)`.
#[inline]
pub(crate) fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[inline]
pub(crate) fn cubic_weight_derivs(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

/// Clamped coordinate, its integer base, fractional part, and whether the
/// clamp was active (derivative zero).
#[inline]
fn axis(coord: f64, n: usize) -> (isize, f64, bool) {
    let max = (n - 1) as f64;
    let (c, clamped) = if coord < 0.0 {
        (0.0, true)
    } else if coord > max {
        (max, true)
    } else {
        (coord, false)
    };
    let base = c.floor();
    (base as isize, c - base, clamped)
}

#[inline]
fn tap(base: isize, offset: isize, n: usize) -> usize {
    (base + offset).clamp(0, n as isize - 1) as usize
}

/// Interpolated value at `(x, y)` (no output clamp).
pub(crate) fn sample(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let (bx, tx, _) = axis(x, width);
    let (by, ty, _) = axis(y, height);
    let wx = cubic_weights(tx);
    let wy = cubic_weights(ty);
    let mut acc = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        let row = tap(by, j as isize - 1, height) * width;
        let mut line = 0.0;
        for (i, wxi) in wx.iter().enumerate() {
            line += wxi * plane[row + tap(bx, i as isize - 1, width)];
        }
        acc += wyj * line;
    }
    acc
}

/// Interpolated value and its partial derivatives in x and y.
pub(crate) fn sample_with_gradient(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> (f64, f64, f64) {
    let (bx, tx, cx) = axis(x, width);
    let (by, ty, cy) = axis(y, height);
    let wx = cubic_weights(tx);
    let wy = cubic_weights(ty);
    let dwx = cubic_weight_derivs(tx);
    let dwy = cubic_weight_derivs(ty);
    // derivative weights sum to zero, so they are applied to differences
    // against a reference tap; constant neighbourhoods then give exactly 0
    let mut lines = [0.0; 4];
    let mut dlines = [0.0; 4];
    for j in 0..4 {
        let row = tap(by, j as isize - 1, height) * width;
        let reference = plane[row + tap(bx, 0, width)];
        for i in 0..4 {
            let s = plane[row + tap(bx, i as isize - 1, width)];
            lines[j] += wx[i] * s;
            dlines[j] += dwx[i] * (s - reference);
        }
    }
    let (mut val, mut gx, mut gy) = (0.0, 0.0, 0.0);
    for j in 0..4 {
        val += wy[j] * lines[j];
        gx += wy[j] * dlines[j];
        gy += dwy[j] * (lines[j] - lines[1]);
    }
    if cx {
        gx = 0.0;
    }
    if cy {
        gy = 0.0;
    }
    (val, gx, gy)
}

fn check_dims(y: &Image, flow: &FlowField) -> Result<()> {
    if y.width() != flow.width() || y.height() != flow.height() {
        return Err(crate::Error::DimensionMismatch(format!(
            "warp: image {}x{} vs flow {}x{}",
            y.width(),
            y.height(),
            flow.width(),
            flow.height()
        )));
    }
    Ok(())
}

/// Warp without the final `[0, 1]` clamp; linear in `y`.
pub fn warp_unclamped(y: &Image, flow: &FlowField) -> Result<Image> {
    check_dims(y, flow)?;
    let (w, h) = (y.width(), y.height());
    let planes = y
        .planes()
        .iter()
        .map(|plane| {
            let mut out = Vec::with_capacity(w * h);
            for row in 0..h {
                for col in 0..w {
                    let i = row * w + col;
                    out.push(sample(
                        plane,
                        w,
                        h,
                        col as f64 + flow.u()[i],
                        row as f64 + flow.v()[i],
                    ));
                }
            }
            out
        })
        .collect();
    Image::from_planes(w, h, planes)
}

/// Applies the deformation to every channel with one shared field.
pub fn warp(y: &Image, flow: &FlowField) -> Result<Image> {
    Ok(warp_unclamped(y, flow)?.clamped())
}

/// Clamped warp plus the derivative of each warped sample with respect to
/// the local `u` and `v`. Derivatives vanish wherever either clamp (source
/// coordinate or output range) is active.
pub(crate) struct WarpLinearization {
    pub warped: Vec<Vec<f64>>,
    pub dx: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
}

pub(crate) fn warp_linearized(y: &Image, flow: &FlowField) -> WarpLinearization {
    let (w, h) = (y.width(), y.height());
    let n = w * h;
    let mut lin = WarpLinearization {
        warped: Vec::with_capacity(y.channels()),
        dx: Vec::with_capacity(y.channels()),
        dy: Vec::with_capacity(y.channels()),
    };
    for plane in y.planes() {
        let mut val = vec![0.0; n];
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                let (s, dx, dy) =
                    sample_with_gradient(plane, w, h, col as f64 + flow.u()[i], row as f64 + flow.v()[i]);
                if (0.0..=1.0).contains(&s) {
                    val[i] = s;
                    gx[i] = dx;
                    gy[i] = dy;
                } else {
                    val[i] = s.clamp(0.0, 1.0);
                }
            }
        }
        lin.warped.push(val);
        lin.dx.push(gx);
        lin.dy.push(gy);
    }
    lin
}
