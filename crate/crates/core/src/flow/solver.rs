//! Coarse-to-fine minimization of the flow energy.
//!
//! Each outer iteration linearizes the warped image around the current
//! field and solves the resulting weighted least-squares problem for the
//! new field with red-black block Gauss–Seidel sweeps (one 2×2 solve per
//! pixel). With the Charbonnier option the data term is re-weighted between
//! inner iterations (IRLS); without it the inner iterations simply continue
//! the sweeps. A proposal is accepted only if the true (non-linearized)
//! energy does not increase; otherwise the step is halved.

use log::trace;

use super::{check_flow_inputs, effective_lambda, flow_energy, FlowField, FlowParams};
use crate::error::Result;
use crate::filter::{gaussian_blur, resize_bilinear};
use crate::image::Image;
use crate::warp::warp_linearized;
use crate::weights::WeightMap;

const PYRAMID_BLUR_SIGMA: f64 = 0.8;
const MAX_HALVINGS: usize = 10;
/// Proximal weight keeping the per-pixel systems invertible where the
/// image gradient and the smoothness coupling both vanish.
const PROXIMAL: f64 = 1e-10;
/// Outer iterations stop once no pixel moves by more than this.
const MIN_STEP: f64 = 1e-7;

/// Total energy at the finest level: the starting value followed by one
/// entry per outer iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowTrace {
    pub levels: usize,
    pub finest_energies: Vec<f64>,
    pub rejected_steps: usize,
}

struct Level {
    y: Image,
    x: Image,
    w: WeightMap,
}

fn downsample(img: &Image, width: usize, height: usize) -> Image {
    let planes = img
        .planes()
        .iter()
        .map(|p| {
            let blurred = gaussian_blur(p, img.width(), img.height(), PYRAMID_BLUR_SIGMA);
            resize_bilinear(&blurred, img.width(), img.height(), width, height)
        })
        .collect();
    Image::from_planes(width, height, planes).expect("downsampled planes are well formed")
}

/// Finest level first.
fn build_pyramid(y: &Image, x: &Image, w: &WeightMap, params: &FlowParams) -> Vec<Level> {
    let mut levels = vec![Level {
        y: y.clone(),
        x: x.clone(),
        w: w.clone(),
    }];
    loop {
        let last = levels.last().expect("non-empty");
        let nw = (last.y.width() as f64 * params.pyramid_scale).round() as usize;
        let nh = (last.y.height() as f64 * params.pyramid_scale).round() as usize;
        if nw.min(nh) < params.min_size || (nw, nh) == (last.y.width(), last.y.height()) {
            break;
        }
        let next = Level {
            y: downsample(&last.y, nw, nh),
            x: downsample(&last.x, nw, nh),
            w: w.resized(nw, nh),
        };
        levels.push(next);
    }
    levels
}

/// Per-pixel normal-equation coefficients of the linearized data term.
struct DataSystem {
    a11: Vec<f64>,
    a12: Vec<f64>,
    a22: Vec<f64>,
    /// Right-hand side constants: `a11·u0 + a12·v0 − Σ Ix·r` and the v analogue.
    c1: Vec<f64>,
    c2: Vec<f64>,
}

fn data_system(
    level: &Level,
    flow: &FlowField,
    lin: &crate::warp::WarpLinearization,
    robust: Option<(&FlowField, f64)>,
) -> DataSystem {
    let n = flow.u().len();
    let mut sys = DataSystem {
        a11: vec![0.0; n],
        a12: vec![0.0; n],
        a22: vec![0.0; n],
        c1: vec![0.0; n],
        c2: vec![0.0; n],
    };
    for c in 0..lin.warped.len() {
        let target = level.x.plane(c);
        for i in 0..n {
            let ix = lin.dx[c][i];
            let iy = lin.dy[c][i];
            let r = lin.warped[c][i] - target[i];
            let weight = match robust {
                // Charbonnier IRLS weight at the current linearized residual
                Some((current, eps)) => {
                    let du = current.u()[i] - flow.u()[i];
                    let dv = current.v()[i] - flow.v()[i];
                    let lr = r + ix * du + iy * dv;
                    1.0 / (lr * lr + eps * eps).sqrt()
                }
                None => 1.0,
            };
            sys.a11[i] += weight * ix * ix;
            sys.a12[i] += weight * ix * iy;
            sys.a22[i] += weight * iy * iy;
            sys.c1[i] -= weight * ix * r;
            sys.c2[i] -= weight * iy * r;
        }
    }
    for i in 0..n {
        let (u0, v0) = (flow.u()[i], flow.v()[i]);
        sys.c1[i] += sys.a11[i] * u0 + sys.a12[i] * v0 + PROXIMAL * u0;
        sys.c2[i] += sys.a12[i] * u0 + sys.a22[i] * v0 + PROXIMAL * v0;
    }
    sys
}

/// Red-black block Gauss–Seidel on the weighted Laplacian system.
fn relax(sys: &DataSystem, weights: &[f64], lambda: f64, width: usize, height: usize, next: &mut FlowField, sweeps: usize) {
    let (u, v) = next.parts_mut();
    for _ in 0..sweeps {
        for color in 0..2 {
            for row in 0..height {
                let start = (row + color) % 2;
                for col in (start..width).step_by(2) {
                    let i = row * width + col;
                    let (mut diag, mut nu, mut nv) = (0.0, 0.0, 0.0);
                    let mut edge = |j: usize, we: f64| {
                        diag += we;
                        nu += we * u[j];
                        nv += we * v[j];
                    };
                    if col + 1 < width {
                        edge(i + 1, weights[i]);
                    }
                    if row + 1 < height {
                        edge(i + width, weights[i]);
                    }
                    if col > 0 {
                        edge(i - 1, weights[i - 1]);
                    }
                    if row > 0 {
                        edge(i - width, weights[i - width]);
                    }
                    let d = lambda * diag + PROXIMAL;
                    let m11 = sys.a11[i] + d;
                    let m22 = sys.a22[i] + d;
                    let m12 = sys.a12[i];
                    let r1 = sys.c1[i] + lambda * nu;
                    let r2 = sys.c2[i] + lambda * nv;
                    let det = m11 * m22 - m12 * m12;
                    if det > 0.0 {
                        u[i] = (m22 * r1 - m12 * r2) / det;
                        v[i] = (m11 * r2 - m12 * r1) / det;
                    }
                }
            }
        }
    }
}

fn max_change(a: &FlowField, b: &FlowField) -> f64 {
    a.u()
        .iter()
        .zip(b.u())
        .chain(a.v().iter().zip(b.v()))
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

/// Runs the outer iterations on one level. Returns the final field; every
/// accepted step is recorded in `energies` when provided.
fn refine_level(
    level: &Level,
    mut flow: FlowField,
    params: &FlowParams,
    mut energies: Option<&mut Vec<f64>>,
    rejected: &mut usize,
) -> Result<FlowField> {
    let (width, height) = (level.y.width(), level.y.height());
    let lambda = effective_lambda(params.lambda);
    let mut energy = flow_energy(&level.y, &level.x, &flow, &level.w, params.lambda)?.total;
    if let Some(e) = energies.as_deref_mut() {
        e.push(energy);
    }
    for outer in 0..params.outer_iterations {
        if energy == 0.0 {
            break;
        }
        let lin = warp_linearized(&level.y, &flow);
        let mut proposal = flow.clone();
        let mut sys = data_system(level, &flow, &lin, None);
        for inner in 0..params.inner_iterations.max(1) {
            if params.charbonnier && inner > 0 {
                sys = data_system(level, &flow, &lin, Some((&proposal, params.charbonnier_eps)));
            }
            relax(&sys, level.w.weights(), lambda, width, height, &mut proposal, params.solver_iterations);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = if step == 1.0 { proposal.clone() } else { flow.lerp(&proposal, step) };
            let e = flow_energy(&level.y, &level.x, &candidate, &level.w, params.lambda)?.total;
            if e <= energy {
                accepted = Some((candidate, e));
                break;
            }
            *rejected += 1;
            step *= 0.5;
        }
        let Some((candidate, e)) = accepted else {
            trace!("level {width}x{height}: outer {outer} found no descent step");
            break;
        };
        let moved = max_change(&flow, &candidate);
        trace!("level {width}x{height}: outer {outer} energy {energy:.6e} -> {e:.6e} (step {step})");
        flow = candidate;
        energy = e;
        if let Some(es) = energies.as_deref_mut() {
            es.push(energy);
        }
        if moved < MIN_STEP {
            break;
        }
    }
    Ok(flow)
}

/// Flow warping `y` onto `x`, starting from `init` (identity when `None`).
///
/// The returned field never has a higher [`flow_energy`] than `init` at the
/// full resolution.
pub fn estimate_flow(
    y: &Image,
    x: &Image,
    w: &WeightMap,
    params: &FlowParams,
    init: Option<&FlowField>,
) -> Result<FlowField> {
    Ok(estimate_flow_traced(y, x, w, params, init)?.0)
}

pub fn estimate_flow_traced(
    y: &Image,
    x: &Image,
    w: &WeightMap,
    params: &FlowParams,
    init: Option<&FlowField>,
) -> Result<(FlowField, FlowTrace)> {
    params.validate()?;
    let identity = FlowField::zeros(y.width(), y.height());
    let init = init.unwrap_or(&identity);
    check_flow_inputs(y, x, init, w)?;

    let levels = build_pyramid(y, x, w, params);
    let mut trace = FlowTrace {
        levels: levels.len(),
        ..Default::default()
    };

    let coarsest = levels.last().expect("pyramid has a level");
    let mut flow = init.resized(coarsest.y.width(), coarsest.y.height());
    for level in levels[1..].iter().rev() {
        let resized = flow.resized(level.y.width(), level.y.height());
        flow = refine_level(level, resized, params, None, &mut trace.rejected_steps)?;
    }

    let finest = &levels[0];
    let mut start = flow.resized(y.width(), y.height());
    if levels.len() > 1 {
        // the coarse solution only replaces the caller's field if it is better
        let from_coarse = flow_energy(y, x, &start, w, params.lambda)?.total;
        let from_init = flow_energy(y, x, init, w, params.lambda)?.total;
        if from_init <= from_coarse {
            start = init.clone();
        }
    }
    let result = refine_level(
        finest,
        start,
        params,
        Some(&mut trace.finest_energies),
        &mut trace.rejected_steps,
    )?;
    Ok((result, trace))
}
