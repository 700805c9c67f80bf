//! Boundary normal directions from second derivatives of a smoothed
//! boundary map.
//!
//! Normals are unoriented: angles live in `[0, π)`. Angle `0` means the normal
//! points along `+x` (a vertical boundary), `π/2` along `+y`.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::raster::{correlate_separable, correlate_separable_adjoint, gaussian_kernel, ScalarField};

pub const DEFAULT_NORMAL_SIGMA: f64 = 1.5;

/// Smoothed response a pixel needs before its normal counts as defined.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

const SECOND_DIFF: [f64; 3] = [1.0, -2.0, 1.0];
const CENTRAL_DIFF: [f64; 3] = [-0.5, 0.0, 0.5];
const IDENTITY: [f64; 1] = [1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct NormalField {
    width: usize,
    height: usize,
    angle: Vec<f64>,
    valid: Vec<bool>,
}

impl NormalField {
    pub fn new(width: usize, height: usize, angle: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if angle.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(width * height, angle.len().max(valid.len())));
        }
        let angle = angle.into_iter().map(reduce_angle).collect();
        Ok(Self {
            width,
            height,
            angle,
            valid,
        })
    }

    /// Same angle at every pixel, all valid.
    pub fn uniform(width: usize, height: usize, angle: f64) -> Self {
        Self {
            width,
            height,
            angle: vec![reduce_angle(angle); width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Angle at `(x, y)` when the normal is defined there.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.angle[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Two channels `(cos 2θ, sin 2θ)`; undefined pixels encode as `(0, 0)`.
    pub fn to_field(&self) -> ScalarField {
        let n = self.width * self.height;
        let mut values = vec![0.0; 2 * n];
        for i in 0..n {
            if self.valid[i] {
                values[i] = (2.0 * self.angle[i]).cos();
                values[n + i] = (2.0 * self.angle[i]).sin();
            }
        }
        ScalarField::new(self.width, self.height, 2, values).expect("finite encoding")
    }

    pub fn from_field(field: &ScalarField) -> Result<Self> {
        if field.channels() != 2 {
            return Err(Error::shape("2 channels", field.channels()));
        }
        let (c, s) = (field.plane(0), field.plane(1));
        let valid: Vec<bool> = c.iter().zip(s).map(|(&c, &s)| c != 0.0 || s != 0.0).collect();
        let angle = c.iter().zip(s).map(|(&c, &s)| 0.5 * s.atan2(c)).collect();
        Self::new(field.width(), field.height(), angle, valid)
    }
}

/// Maps an angle onto `[0, π)`.
pub fn reduce_angle(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Smallest angle between two unoriented directions, in `[0, π/2]`.
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Smoothed map and its finite-difference Hessian planes.
pub(crate) struct Hessian {
    pub smoothed: Vec<f64>,
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
}

pub(crate) fn hessian(plane: &[f64], width: usize, height: usize, sigma: f64) -> Hessian {
    let g = gaussian_kernel(sigma);
    let smoothed = correlate_separable(plane, width, height, &g, &g);
    let xx = correlate_separable(&smoothed, width, height, &SECOND_DIFF, &IDENTITY);
    let yy = correlate_separable(&smoothed, width, height, &IDENTITY, &SECOND_DIFF);
    let xy = correlate_separable(&smoothed, width, height, &CENTRAL_DIFF, &CENTRAL_DIFF);
    Hessian { smoothed, xx, xy, yy }
}

/// Pulls sensitivities on the Hessian planes back onto the input plane.
pub(crate) fn hessian_adjoint(
    d_xx: &[f64],
    d_xy: &[f64],
    d_yy: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
) -> Vec<f64> {
    let mut d_smoothed = correlate_separable_adjoint(d_xx, width, height, &SECOND_DIFF, &IDENTITY);
    let from_yy = correlate_separable_adjoint(d_yy, width, height, &IDENTITY, &SECOND_DIFF);
    let from_xy = correlate_separable_adjoint(d_xy, width, height, &CENTRAL_DIFF, &CENTRAL_DIFF);
    for ((s, a), b) in d_smoothed.iter_mut().zip(&from_yy).zip(&from_xy) {
        *s += a + b;
    }
    let g = gaussian_kernel(sigma);
    correlate_separable_adjoint(&d_smoothed, width, height, &g, &g)
}

/// Orientation of the Hessian eigenvector with the largest-magnitude
/// eigenvalue, plus `∂θ/∂(xx, xy, yy)`. `None` when the Hessian is isotropic.
pub(crate) fn hessian_orientation(xx: f64, xy: f64, yy: f64) -> Option<(f64, [f64; 3])> {
    let dx = xx - yy;
    let dy = 2.0 * xy;
    let r2 = dx * dx + dy * dy;
    let scale = xx.abs() + xy.abs() + yy.abs();
    if scale < 1e-14 || r2.sqrt() <= 1e-9 * scale {
        return None;
    }
    // Eigenvector of the algebraically larger eigenvalue.
    let mut theta = 0.5 * dy.atan2(dx);
    if xx + yy < 0.0 {
        theta += FRAC_PI_2;
    }
    let grad = [-xy / r2, dx / r2, xy / r2];
    Some((reduce_angle(theta), grad))
}

/// Per-pixel boundary normals of a single-channel, non-negative boundary map.
pub fn estimate_normals(boundary: &ScalarField, sigma: f64) -> Result<NormalField> {
    if boundary.channels() != 1 {
        return Err(Error::shape("1 channel", boundary.channels()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::param(format!("sigma must be >= 0, got {sigma}")));
    }
    let (w, h) = (boundary.width(), boundary.height());
    let hess = hessian(boundary.values(), w, h, sigma);
    let mut angle = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for i in 0..w * h {
        if hess.smoothed[i] <= SUPPORT_THRESHOLD {
            continue;
        }
        if let Some((theta, _)) = hessian_orientation(hess.xx[i], hess.xy[i], hess.yy[i]) {
            angle[i] = theta;
            valid[i] = true;
        }
    }
    NormalField::new(w, h, angle, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn line_field(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> ScalarField {
        ScalarField::from_fn(w, h, |x, y| if on(x, y) { 1.0 } else { 0.0 })
    }

    #[test]
    fn angular_difference_cases() {
        assert_eq!(angular_difference(0.0, 0.0), 0.0);
        assert!((angular_difference(0.0, FRAC_PI_2) - FRAC_PI_2).abs() < 1e-15);
        assert!((angular_difference(0.1, PI - 0.1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn vertical_line_normal_is_zero() {
        let f = line_field(21, 21, |x, _| x == 10);
        let n = estimate_normals(&f, DEFAULT_NORMAL_SIGMA).unwrap();
        for y in 3..18 {
            let a = n.get(10, y).expect("valid on the line");
            assert!(angular_difference(a, 0.0) < 1e-9, "y={y} angle={a}");
        }
    }

    #[test]
    fn horizontal_line_normal_is_half_pi() {
        let f = line_field(21, 21, |_, y| y == 10);
        let n = estimate_normals(&f, DEFAULT_NORMAL_SIGMA).unwrap();
        for x in 3..18 {
            assert!(angular_difference(n.get(x, 10).unwrap(), FRAC_PI_2) < 1e-9);
        }
    }

    #[test]
    fn diagonal_line_normal() {
        let f = line_field(25, 25, |x, y| x == y);
        let n = estimate_normals(&f, DEFAULT_NORMAL_SIGMA).unwrap();
        for i in 5..20 {
            assert!(angular_difference(n.get(i, i).unwrap(), 3.0 * FRAC_PI_4) < 1e-9);
        }
    }

    #[test]
    fn multi_channel_rejected() {
        assert!(estimate_normals(&ScalarField::zeros(4, 4, 2), 1.0).is_err());
    }

    #[test]
    fn far_from_boundary_is_invalid() {
        let f = line_field(40, 10, |x, _| x == 2);
        let n = estimate_normals(&f, DEFAULT_NORMAL_SIGMA).unwrap();
        assert!(!n.is_valid(35, 5));
    }

    #[test]
    fn isotropic_point_is_invalid() {
        // Centre of a radially symmetric blob has xx == yy, xy == 0.
        let f = ScalarField::from_fn(15, 15, |x, y| {
            let d2 = (x as f64 - 7.0).powi(2) + (y as f64 - 7.0).powi(2);
            (-d2 / 4.0).exp()
        });
        let n = estimate_normals(&f, 1.0).unwrap();
        assert!(!n.is_valid(7, 7));
    }

    #[test]
    fn rotation_by_quarter_turn() {
        // A slanted line and the same raster transposed (a 90° rotation
        // followed by a flip, which maps angle θ to π/2 - θ).
        let (w, h) = (41, 41);
        let on = |x: usize, y: usize| {
            let d = (y as f64 - 20.0) - 0.4 * (x as f64 - 20.0);
            d.abs() < 0.5
        };
        let f = line_field(w, h, on);
        let rot = line_field(w, h, |x, y| {
            // rotate 90° about the centre: (x, y) -> (40 - y, x)
            on(y, 40 - x)
        });
        let n = estimate_normals(&f, DEFAULT_NORMAL_SIGMA).unwrap();
        let nr = estimate_normals(&rot, DEFAULT_NORMAL_SIGMA).unwrap();
        let mut worst: f64 = 0.0;
        for x in 8..33 {
            for y in 8..33 {
                if !on(x, y) {
                    continue;
                }
                let (rx, ry) = (40 - y, x);
                let a = n.get(x, y).unwrap();
                let b = nr.get(rx, ry).unwrap();
                worst = worst.max(angular_difference(a + FRAC_PI_2, b));
            }
        }
        assert!(worst < 0.05, "worst deviation {worst}");
    }

    #[test]
    fn translation_equivariant() {
        let on =
            |x: isize, y: isize| (x - 12).pow(2) + (y - 11).pow(2) <= 36 && (x - 12).pow(2) + (y - 11).pow(2) >= 25;
        let f = ScalarField::from_fn(32, 32, |x, y| on(x as isize, y as isize) as u8 as f64);
        let g = ScalarField::from_fn(32, 32, |x, y| on(x as isize - 2, y as isize - 3) as u8 as f64);
        let nf = estimate_normals(&f, DEFAULT_NORMAL_SIGMA).unwrap();
        let ng = estimate_normals(&g, DEFAULT_NORMAL_SIGMA).unwrap();
        for y in 2..22 {
            for x in 2..22 {
                assert_eq!(nf.get(x, y), ng.get(x + 2, y + 3), "({x}, {y})");
            }
        }
    }

    #[test]
    fn field_encoding_round_trip() {
        let f = line_field(15, 15, |x, y| x + y == 14);
        let n = estimate_normals(&f, 1.0).unwrap();
        let back = NormalField::from_field(&n.to_field()).unwrap();
        for y in 0..15 {
            for x in 0..15 {
                match (n.get(x, y), back.get(x, y)) {
                    (Some(a), Some(b)) => assert!(angular_difference(a, b) < 1e-12),
                    (None, None) => {}
                    other => panic!("validity mismatch at ({x}, {y}): {other:?}"),
                }
            }
        }
    }

    #[test]
    fn orientation_gradient_matches_finite_differences() {
        let (a, b, c) = (-0.7, 0.23, 0.31);
        let (_, g) = hessian_orientation(a, b, c).unwrap();
        let h = 1e-6;
        let th = |a, b, c| hessian_orientation(a, b, c).unwrap().0;
        let num = [
            (th(a + h, b, c) - th(a - h, b, c)) / (2.0 * h),
            (th(a, b + h, c) - th(a, b - h, c)) / (2.0 * h),
            (th(a, b, c + h) - th(a, b, c - h)) / (2.0 * h),
        ];
        for k in 0..3 {
            assert!((g[k] - num[k]).abs() < 1e-6, "{k}: {} vs {}", g[k], num[k]);
        }
    }
}
