use crate::error::{Error, Result};
use crate::raster::ScalarField;

/// Normalized 1-D Gaussian taps truncated at `±ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian blur of every channel, edge-replicated.
pub fn gaussian_smooth(field: &ScalarField, sigma: f64) -> Result<ScalarField> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let k = gaussian_kernel(sigma);
    let mut out = field.clone();
    for c in 0..field.channels() {
        let smoothed = correlate_separable(field.plane(c), field.width(), field.height(), &k, &k);
        out.plane_mut(c).copy_from_slice(&smoothed);
    }
    Ok(out)
}

/// Correlates a plane with `kx` along rows then `ky` along columns. Taps are
/// centred; out-of-range reads replicate the nearest edge pixel.
pub(crate) fn correlate_separable(plane: &[f64], width: usize, height: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let rows = correlate_rows(plane, width, height, kx);
    correlate_cols(&rows, width, height, ky)
}

/// Adjoint of [`correlate_separable`]: maps output sensitivities back onto
/// the input plane.
pub(crate) fn correlate_separable_adjoint(
    grad_out: &[f64],
    width: usize,
    height: usize,
    kx: &[f64],
    ky: &[f64],
) -> Vec<f64> {
    let cols = correlate_cols_adjoint(grad_out, width, height, ky);
    correlate_rows_adjoint(&cols, width, height, kx)
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn correlate_rows(plane: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (j, &w) in k.iter().enumerate() {
                acc += w * row[clamp_index(x as isize + j as isize - r, width)];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn correlate_cols(plane: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for (j, &w) in k.iter().enumerate() {
            let src = clamp_index(y as isize + j as isize - r, height);
            let src_row = &plane[src * width..(src + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += w * s;
            }
        }
    }
    out
}

fn correlate_rows_adjoint(grad: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; grad.len()];
    for y in 0..height {
        for x in 0..width {
            let g = grad[y * width + x];
            if g == 0.0 {
                continue;
            }
            for (j, &w) in k.iter().enumerate() {
                out[y * width + clamp_index(x as isize + j as isize - r, width)] += w * g;
            }
        }
    }
    out
}

fn correlate_cols_adjoint(grad: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; grad.len()];
    for y in 0..height {
        for (j, &w) in k.iter().enumerate() {
            let dst = clamp_index(y as isize + j as isize - r, height);
            for x in 0..width {
                out[dst * width + x] += w * grad[y * width + x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_identity() {
        let f = ScalarField::from_fn(5, 4, |x, y| (x * 7 + y) as f64 * 0.1);
        assert_eq!(gaussian_smooth(&f, 0.0).unwrap(), f);
    }

    #[test]
    fn constant_field_unchanged() {
        let f = ScalarField::filled(9, 7, 2, 0.37);
        for sigma in [0.5, 1.0, 2.5, 6.0] {
            let g = gaussian_smooth(&f, sigma).unwrap();
            for v in g.values() {
                assert!((v - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_centre_is_product_of_kernel_centres() {
        let mut f = ScalarField::zeros(15, 15, 1);
        f.set(0, 7, 7, 1.0);
        let g = gaussian_smooth(&f, 1.0).unwrap();
        let denom: f64 = (-3i32..=3).map(|k| (-(k * k) as f64 / 2.0).exp()).sum();
        let centre = 1.0 / denom;
        assert!((g.get(0, 7, 7) - centre * centre).abs() < 1e-15);
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(gaussian_smooth(&ScalarField::zeros(2, 2, 1), -1.0).is_err());
    }

    #[test]
    fn adjoint_identity() {
        // <A x, y> == <x, A^T y>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (11, 8);
        let x: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kx = [0.5, -2.0, 1.25];
        let ky = [0.1, 0.2, 0.3, 0.2, -0.4];
        let ax = correlate_separable(&x, w, h, &kx, &ky);
        let aty = correlate_separable_adjoint(&y, w, h, &kx, &ky);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
