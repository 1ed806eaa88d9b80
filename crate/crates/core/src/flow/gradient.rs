//! Analytic gradient of the flow energy and a finite-difference check of it.

use super::{check_flow_inputs, effective_lambda, flow_energy, FlowField};
use crate::error::Result;
use crate::image::Image;
use crate::warp::warp_linearized;
use crate::weights::WeightMap;

const FD_STEP: f64 = 1e-5;

/// `(∂E/∂u, ∂E/∂v)` per pixel, differentiating through the bicubic warp.
pub fn flow_gradient(
    y: &Image,
    x: &Image,
    flow: &FlowField,
    w: &WeightMap,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_flow_inputs(y, x, flow, w)?;
    let (width, height) = (flow.width(), flow.height());
    let n = width * height;
    let lin = warp_linearized(y, flow);
    let mut gu = vec![0.0; n];
    let mut gv = vec![0.0; n];
    for c in 0..y.channels() {
        let target = x.plane(c);
        for i in 0..n {
            let r = lin.warped[c][i] - target[i];
            gu[i] += 2.0 * r * lin.dx[c][i];
            gv[i] += 2.0 * r * lin.dy[c][i];
        }
    }
    let lam = effective_lambda(lambda);
    let weights = w.weights();
    let (u, v) = (flow.u(), flow.v());
    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            let mut pair = |j: usize| {
                // the term w_i·(f_j − f_i)² anchored at i
                let k = 2.0 * lam * weights[i];
                let (du, dv) = (u[j] - u[i], v[j] - v[i]);
                gu[j] += k * du;
                gu[i] -= k * du;
                gv[j] += k * dv;
                gv[i] -= k * dv;
            };
            if col + 1 < width {
                pair(i + 1);
            }
            if row + 1 < height {
                pair(i + width);
            }
        }
    }
    Ok((gu, gv))
}

/// Largest relative discrepancy between [`flow_gradient`] and central
/// differences of the total energy. Each component's error is divided by
/// `max(|analytic|, |numeric|, 1e-3·‖numeric‖∞)` so entries that are
/// numerically zero do not dominate. Intended for small rasters (≤ 32×32).
pub fn flow_gradient_check(y: &Image, x: &Image, flow: &FlowField, w: &WeightMap, lambda: f64) -> Result<f64> {
    let (gu, gv) = flow_gradient(y, x, flow, w, lambda)?;
    let n = gu.len();
    let energy = |f: &FlowField| -> Result<f64> { Ok(flow_energy(y, x, f, w, lambda)?.total) };
    let mut numeric = Vec::with_capacity(2 * n);
    for comp in 0..2 {
        for i in 0..n {
            let mut plus = flow.clone();
            let mut minus = flow.clone();
            {
                let (pu, pv) = plus.parts_mut();
                if comp == 0 { pu[i] += FD_STEP } else { pv[i] += FD_STEP }
            }
            {
                let (mu, mv) = minus.parts_mut();
                if comp == 0 { mu[i] -= FD_STEP } else { mv[i] -= FD_STEP }
            }
            numeric.push((energy(&plus)? - energy(&minus)?) / (2.0 * FD_STEP));
        }
    }
    let scale = numeric.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let floor = (1e-3 * scale).max(1e-12);
    Ok(gu
        .iter()
        .chain(&gv)
        .zip(&numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(w: usize, h: usize, phase: f64) -> Image {
        Image::from_fn(w, h, |c, r| {
            let (x, y) = (c as f64, r as f64);
            0.5 + 0.3 * (0.35 * x + phase).sin() * (0.27 * y - phase).cos()
        })
        .unwrap()
    }

    fn random_flow(seed: u64, w: usize, h: usize, amp: f64) -> FlowField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..w * h).map(|_| rng.gen_range(-amp..amp)).collect();
        let v = (0..w * h).map(|_| rng.gen_range(-amp..amp)).collect();
        FlowField::new(w, h, u, v).unwrap()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let y = smooth_image(12, 10, 0.0);
        let x = smooth_image(12, 10, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = WeightMap::from_weights(12, 10, (0..120).map(|_| rng.gen_range(1.0..4.0)).collect()).unwrap();
        let flow = random_flow(1, 12, 10, 0.7);
        for lambda in [0.0, 65.0, 6500.0] {
            let err = flow_gradient_check(&y, &x, &flow, &w, lambda).unwrap();
            assert!(err < 1e-4, "lambda {lambda}: {err}");
        }
    }

    #[test]
    fn constant_source_has_no_data_gradient() {
        let y = Image::filled(8, 8, 1, 0.3).unwrap();
        let x = smooth_image(8, 8, 0.1);
        let flow = random_flow(4, 8, 8, 1.0);
        let (gu, gv) = flow_gradient(&y, &x, &flow, &WeightMap::constant(8, 8), 0.0).unwrap();
        assert!(gu.iter().chain(&gv).all(|&g| g == 0.0));
    }

    #[test]
    fn zero_lambda_is_pure_data_gradient() {
        let y = smooth_image(8, 8, 0.0);
        let x = smooth_image(8, 8, 0.5);
        let flow = random_flow(5, 8, 8, 1.0);
        let w = WeightMap::constant(8, 8);
        let (gu0, gv0) = flow_gradient(&y, &x, &flow, &w, 0.0).unwrap();
        let (gu1, gv1) = flow_gradient(&y, &x, &flow, &w, 65.0).unwrap();
        // the smoothness part is what separates them
        let differs = gu0.iter().zip(&gu1).chain(gv0.iter().zip(&gv1)).any(|(a, b)| a != b);
        assert!(differs);
        let (gus, _) = flow_gradient(&y, &y, &FlowField::zeros(8, 8), &w, 0.0).unwrap();
        assert!(gus.iter().all(|&g| g == 0.0));
    }
}
