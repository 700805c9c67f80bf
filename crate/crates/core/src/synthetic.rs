//! Deterministic synthetic fixtures: ring ridges, noisy-circle tasks and
//! random blobs with oracle boundary probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{distance_transform, gaussian_smooth, mask_to_boundary, BinaryMask, ScalarField};

/// Width of the Gaussian cross-section of synthetic ridges.
pub const RIDGE_SIGMA: f64 = 1.0;

pub fn disc(width: usize, height: usize, center: [f64; 2], radius: f64) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| {
        (x as f64 - center[0]).hypot(y as f64 - center[1]) <= radius
    })
}

/// `exp(-(r - radius)² / 2σ²)` with `r` the distance to `center`.
pub fn ring_field(width: usize, height: usize, center: [f64; 2], radius: f64, sigma: f64) -> ScalarField {
    ScalarField::from_fn(width, height, |x, y| {
        let r = (x as f64 - center[0]).hypot(y as f64 - center[1]);
        (-(r - radius).powi(2) / (2.0 * sigma * sigma)).exp()
    })
}

/// Mean distance from the boundary pixels of `mask` to `center`.
pub fn mean_boundary_radius(mask: &BinaryMask, center: [f64; 2]) -> Option<f64> {
    let pts = mask_to_boundary(mask).points();
    if pts.is_empty() {
        return None;
    }
    let sum: f64 = pts
        .iter()
        .map(|&(x, y)| (x as f64 - center[0]).hypot(y as f64 - center[1]))
        .sum();
    Some(sum / pts.len() as f64)
}

/// Probability field plus the region the evolution starts from.
#[derive(Clone, Debug)]
pub struct RidgeFixture {
    pub pred: ScalarField,
    pub initial: BinaryMask,
    pub centers: Vec<[f64; 2]>,
    pub radius: f64,
}

/// 64x64 ring ridge of radius 10 with a radius-5 disc at its centre.
pub fn ring_fixture() -> RidgeFixture {
    let c = [31.5, 31.5];
    RidgeFixture {
        pred: ring_field(64, 64, c, 10.0, RIDGE_SIGMA),
        initial: disc(64, 64, c, 5.0),
        centers: vec![c],
        radius: 10.0,
    }
}

/// Two disjoint radius-8 rings enclosed by one rectangle. A shrinking
/// evolution (`c < 0`) must split the rectangle into two regions.
pub fn two_ring_fixture() -> RidgeFixture {
    let (w, h) = (64, 64);
    let centers = vec![[17.5, 31.5], [46.5, 31.5]];
    let mut pred = ScalarField::zeros(w, h, 1);
    for &c in &centers {
        let ring = ring_field(w, h, c, 8.0, RIDGE_SIGMA);
        for (p, r) in pred.values_mut().iter_mut().zip(ring.values()) {
            *p = p.max(*r);
        }
    }
    let initial = BinaryMask::from_fn(w, h, |x, y| (3..61).contains(&x) && (16..48).contains(&y));
    RidgeFixture {
        pred,
        initial,
        centers,
        radius: 8.0,
    }
}

/// Noisy-label circle task: the true object is a disc, the annotation is a
/// smaller concentric disc, and the prediction is the blurred true boundary.
#[derive(Clone, Debug)]
pub struct CircleTask {
    pub true_region: BinaryMask,
    pub noisy_region: BinaryMask,
    /// Blurred true boundary, scaled to a maximum of 1.
    pub pred: ScalarField,
    pub center: [f64; 2],
}

pub fn circle_task(size: usize, true_radius: f64, noisy_radius: f64, blur_sigma: f64) -> CircleTask {
    let c = [(size as f64 - 1.0) / 2.0; 2];
    let true_region = disc(size, size, c, true_radius);
    let blurred = gaussian_smooth(&ScalarField::from(&mask_to_boundary(&true_region)), blur_sigma)
        .expect("sigma is non-negative");
    let m = blurred.max();
    CircleTask {
        noisy_region: disc(size, size, c, noisy_radius),
        pred: blurred.map(|v| v / m),
        true_region,
        center: c,
    }
}

/// The standard task: 64x64, true radius 10, annotation radius 8, blur 2.
pub fn standard_circle_task() -> CircleTask {
    circle_task(64, 10.0, 8.0, 2.0)
}

/// Random star-shaped object and an oracle ridge on its boundary.
#[derive(Clone, Debug)]
pub struct Blob {
    pub fine: BinaryMask,
    pub pred: ScalarField,
}

/// Star-shaped blob `r(φ) = R(1 + Σ a_k cos(kφ + ψ_k))`, `k = 2..=4`,
/// centred in a `size`x`size` frame with a mean radius near `0.3·size`.
pub fn random_blob(seed: u64, size: usize) -> Blob {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = size as f64 * rng.random_range(0.26..0.33);
    let harmonics: Vec<(f64, f64, f64)> = (2..=4)
        .map(|k| {
            (
                k as f64,
                rng.random_range(0.0..0.12 / (k as f64 - 1.0)),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let c = [(size as f64 - 1.0) / 2.0; 2];
    let fine = BinaryMask::from_fn(size, size, |x, y| {
        let dx = x as f64 - c[0];
        let dy = y as f64 - c[1];
        let phi = dy.atan2(dx);
        let r = base * (1.0 + harmonics.iter().map(|&(k, a, p)| a * (k * phi + p).cos()).sum::<f64>());
        dx.hypot(dy) <= r
    });
    let pred = oracle_ridge(&fine, RIDGE_SIGMA);
    Blob { fine, pred }
}

/// `exp(-d²/2σ²)` with `d` the distance to the boundary of `region`.
pub fn oracle_ridge(region: &BinaryMask, sigma: f64) -> ScalarField {
    let boundary = mask_to_boundary(region);
    match distance_transform(&boundary) {
        Ok(d) => d.map(|v| (-v * v / (2.0 * sigma * sigma)).exp()),
        Err(_) => ScalarField::zeros(region.width(), region.height(), 1),
    }
}
