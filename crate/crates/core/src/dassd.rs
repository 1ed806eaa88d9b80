//! Deformation-aware SSD: `min_T ‖x − T{y}‖² + λ·ψ(T)`.
//!
//! `y` is warped onto `x`, so the measure is not symmetric. The minimum is
//! taken by the local flow solver, which makes the reported value an upper
//! bound on the true one; because the solver starts from (or is compared
//! against) the identity, it never exceeds the plain SSD.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{estimate_flow, flow_energy, FlowField, FlowParams};
use crate::image::{psnr_from_ssd, ssd, Image};
use crate::weights::WeightMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DassdReport {
    pub dassd: f64,
    /// `λ·ψ(T)` part of `dassd`.
    pub flow_penalty: f64,
    /// `‖x − T{y}‖²` part of `dassd`.
    pub warped_ssd: f64,
    pub ssd: f64,
    #[serde(with = "crate::image::finite_or_null")]
    pub psnr: f64,
    #[serde(skip)]
    pub flow: Option<FlowField>,
}

/// DASSD of `x` against `y`, solving for the flow from the identity.
pub fn dassd(x: &Image, y: &Image, w: &WeightMap, params: &FlowParams) -> Result<DassdReport> {
    dassd_with_hint(x, y, w, params, None)
}

/// As [`dassd`], additionally solving from `hint` and keeping the lower of
/// the two energies.
pub fn dassd_with_hint(
    x: &Image,
    y: &Image,
    w: &WeightMap,
    params: &FlowParams,
    hint: Option<&FlowField>,
) -> Result<DassdReport> {
    let plain = ssd(x, y)?;
    let mut best = estimate_flow(y, x, w, params, None)?;
    let mut energy = flow_energy(y, x, &best, w, params.lambda)?;
    if let Some(hint) = hint {
        let alt = estimate_flow(y, x, w, params, Some(hint))?;
        let alt_energy = flow_energy(y, x, &alt, w, params.lambda)?;
        if alt_energy.total < energy.total {
            best = alt;
            energy = alt_energy;
        }
    }
    Ok(DassdReport {
        dassd: energy.total,
        flow_penalty: energy.total - energy.data_term,
        warped_ssd: energy.data_term,
        ssd: plain,
        psnr: psnr_from_ssd(plain, x.len()),
        flow: Some(best),
    })
}

/// DASSD at several values of λ (returned in the given order).
///
/// The values are solved from the largest λ down, each also starting from
/// the flow of the next larger λ. Since the penalty is non-negative, that
/// flow is never worse at the smaller λ, so the computed values are
/// non-decreasing in λ just like the exact minimum.
pub fn dassd_sweep(
    x: &Image,
    y: &Image,
    w: &WeightMap,
    params: &FlowParams,
    lambdas: &[f64],
) -> Result<Vec<DassdReport>> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<DassdReport>> = vec![None; lambdas.len()];
    let mut hint: Option<FlowField> = None;
    for i in order {
        let p = params.clone().with_lambda(lambdas[i]);
        let r = dassd_with_hint(x, y, w, &p, hint.as_ref())?;
        hint = r.flow.clone();
        out[i] = Some(r);
    }
    Ok(out.into_iter().map(|r| r.expect("every lambda solved")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::gray(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let x = random_image(1, 24, 20);
        let r = dassd(&x, &x, &WeightMap::constant(24, 20), &FlowParams::default()).unwrap();
        assert_eq!(r.dassd, 0.0);
        assert_eq!(r.ssd, 0.0);
        assert_eq!(r.psnr, f64::INFINITY);
    }

    #[test]
    fn penalty_and_data_add_up() {
        let x = random_image(2, 20, 20);
        let y = random_image(3, 20, 20);
        let r = dassd(&x, &y, &WeightMap::constant(20, 20), &FlowParams::default()).unwrap();
        assert!((r.warped_ssd + r.flow_penalty - r.dassd).abs() < 1e-12 * r.dassd.max(1.0));
        assert!(r.flow_penalty >= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn never_exceeds_ssd(seed in any::<u64>()) {
            let x = random_image(seed, 18, 17);
            let y = random_image(seed ^ 0xabc, 18, 17);
            let w = crate::weights::build_weight_map(&y, 3.0, 10.0).unwrap();
            let r = dassd(&x, &y, &w, &FlowParams::default()).unwrap();
            prop_assert!(r.dassd <= r.ssd);
        }
    }
}
