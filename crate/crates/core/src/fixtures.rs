//! Deterministic synthetic test images.
//!
//! * **square**: a smooth, low-contrast background of Gaussian blobs with a
//!   small bright square. The shifted variant renders the same scene
//!   displaced two pixels to the left, which changes how the square lines
//!   up with the dyadic wavelet grid.
//! * **strokes**: thin anti-aliased sinusoidal curves on a flat background,
//!   which are expensive for wavelet codecs at high ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

pub const DEFAULT_SEED: u64 = 0x5eed_2017;

#[derive(Clone, Debug, PartialEq)]
pub struct SquareFixture {
    pub size: usize,
    pub square_size: usize,
    /// Top-left corner of the square in the unshifted image.
    pub square_x: usize,
    pub square_y: usize,
    pub square_contrast: f64,
    /// Leftward shift of the second image, in pixels.
    pub shift: usize,
    pub blobs: usize,
    pub blob_amplitude: f64,
    pub seed: u64,
}

impl Default for SquareFixture {
    fn default() -> Self {
        Self {
            size: 64,
            square_size: 4,
            square_x: 38,
            square_y: 32,
            square_contrast: 0.6,
            shift: 2,
            blobs: 6,
            blob_amplitude: 0.06,
            seed: DEFAULT_SEED,
        }
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

impl SquareFixture {
    fn blobs(&self) -> Vec<Blob> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let s = self.size as f64;
        (0..self.blobs)
            .map(|_| Blob {
                cx: rng.gen_range(0.1 * s..0.9 * s),
                cy: rng.gen_range(0.1 * s..0.9 * s),
                sigma: rng.gen_range(0.08 * s..0.18 * s),
                amp: rng.gen_range(-self.blob_amplitude..self.blob_amplitude),
            })
            .collect()
    }

    fn render(&self, offset: f64) -> Image {
        let blobs = self.blobs();
        let (x0, y0, k) = (self.square_x as f64, self.square_y as f64, self.square_size as f64);
        Image::from_fn(self.size, self.size, |c, r| {
            let (x, y) = (c as f64 + offset, r as f64);
            let mut v = 0.3;
            for b in &blobs {
                v += b.amp * (-((x - b.cx).powi(2) + (y - b.cy).powi(2)) / (2.0 * b.sigma * b.sigma)).exp();
            }
            if x >= x0 && x < x0 + k && y >= y0 && y < y0 + k {
                v += self.square_contrast;
            }
            v.clamp(0.0, 1.0)
        })
        .expect("fixture size is positive")
    }

    pub fn original(&self) -> Image {
        self.render(0.0)
    }

    /// Content moved `shift` pixels left: `shifted(ξ) = original(ξ + shift)`.
    pub fn shifted(&self) -> Image {
        self.render(self.shift as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrokesFixture {
    pub size: usize,
    pub strokes: usize,
    /// Half-width of each stroke's core, in pixels.
    pub half_width: f64,
    pub background: f64,
    pub ink: f64,
    pub seed: u64,
}

impl Default for StrokesFixture {
    fn default() -> Self {
        Self {
            size: 64,
            strokes: 5,
            half_width: 0.6,
            background: 0.15,
            ink: 0.85,
            seed: DEFAULT_SEED,
        }
    }
}

impl StrokesFixture {
    /// Roughly horizontal sinusoids `y = base + a·sin(f·x + φ)`, coverage
    /// computed from the vertical distance with a one-pixel linear ramp.
    pub fn render(&self) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let s = self.size as f64;
        let curves: Vec<(f64, f64, f64, f64)> = (0..self.strokes)
            .map(|i| {
                let base = s * (i as f64 + 0.5) / self.strokes as f64;
                let amp = rng.gen_range(0.04 * s..0.09 * s);
                let freq = rng.gen_range(1.5..3.0) * std::f64::consts::TAU / s;
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (base, amp, freq, phase)
            })
            .collect();
        Image::from_fn(self.size, self.size, |c, r| {
            let (x, y) = (c as f64, r as f64);
            let mut coverage: f64 = 0.0;
            for &(base, amp, freq, phase) in &curves {
                let cy = base + amp * (freq * x + phase).sin();
                // distance along the normal of the curve
                let slope = amp * freq * (freq * x + phase).cos();
                let d = (y - cy).abs() / (1.0 + slope * slope).sqrt();
                coverage = coverage.max((self.half_width + 0.5 - d).clamp(0.0, 1.0));
            }
            self.background + (self.ink - self.background) * coverage
        })
        .expect("fixture size is positive")
    }
}
