//! Separable Gaussian blur and bilinear resampling on single planes.

/// Half-sample symmetric reflection of `i` into `0..n`, periodic with
/// period `2n` so any kernel radius is valid.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

/// Unit-sum Gaussian taps `g[0..=radius]` (one side; `g[k] = g[-k]`), with
/// radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut taps: Vec<f64> = (0..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum = taps[0] + 2.0 * taps[1..].iter().sum::<f64>();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with reflected boundaries.
pub fn gaussian_blur(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_kernel(sigma);
    let r = taps.len() as isize - 1;
    let mut tmp = vec![0.0; plane.len()];
    for row in 0..height {
        let line = &plane[row * width..(row + 1) * width];
        for col in 0..width {
            let mut acc = taps[0] * line[col];
            for k in 1..=r {
                let t = taps[k as usize];
                acc += t * (line[reflect(col as isize - k, width)] + line[reflect(col as isize + k, width)]);
            }
            tmp[row * width + col] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = taps[0] * tmp[row * width + col];
            for k in 1..=r {
                let t = taps[k as usize];
                let up = reflect(row as isize - k, height);
                let down = reflect(row as isize + k, height);
                acc += t * (tmp[up * width + col] + tmp[down * width + col]);
            }
            out[row * width + col] = acc;
        }
    }
    out
}

/// Bilinear resampling with pixel-centre alignment: output pixel `i` reads
/// source coordinate `(i + 0.5)·(src / dst) − 0.5`, clamped to the raster.
pub fn resize_bilinear(plane: &[f64], width: usize, height: usize, new_w: usize, new_h: usize) -> Vec<f64> {
    let sx = width as f64 / new_w as f64;
    let sy = height as f64 / new_h as f64;
    let axis = |i: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = Vec::with_capacity(new_w * new_h);
    for row in 0..new_h {
        let (y0, y1, fy) = axis(row, sy, height);
        for col in 0..new_w {
            let (x0, x1, fx) = axis(col, sx, width);
            let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
            let bottom = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}
