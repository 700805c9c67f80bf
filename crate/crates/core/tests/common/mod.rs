//! Helpers shared by the gradient and acceptance targets.

use contourforge::losses::{direction_loss, nms_loss, total_loss, weighted_bce, GroundTruth, LossWeights};
use contourforge::raster::ScalarField;
use contourforge::BinaryMask;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

pub fn random_instance(rng: &mut ChaCha8Rng) -> (ScalarField, GroundTruth) {
    let (cx, cy) = (rng.random_range(6.0..10.0), rng.random_range(6.0..10.0));
    let (rx, ry) = (rng.random_range(2.5..5.5), rng.random_range(2.5..5.5));
    let region = BinaryMask::from_fn(16, 16, |x, y| {
        ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2) <= 1.0
    });
    let gt = GroundTruth::from_regions(&[region]).unwrap();
    let logits = ScalarField::from_fn(16, 16, |_, _| rng.random_range(-2.5..2.5));
    (logits, gt)
}

/// Largest relative error over all logits; entries whose absolute
/// disagreement is below the floor count as exact.
pub fn max_relative_error(analytic: &ScalarField, logits: &ScalarField, f: impl Fn(&ScalarField) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..logits.len() {
        let mut plus = logits.clone();
        plus.values_mut()[i] += STEP;
        let mut minus = logits.clone();
        minus.values_mut()[i] -= STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
        let a = analytic.values()[i];
        let diff = (a - numeric).abs();
        if a.abs().max(numeric.abs()) > 1e-3 {
            checked += 1;
        }
        if diff < ABS_FLOOR {
            continue;
        }
        worst = worst.max(diff / a.abs().max(numeric.abs()));
    }
    assert!(checked > 0, "gradient is numerically zero everywhere");
    worst
}

/// Worst relative error of (bce, nms, dir, total) over `instances` random
/// 16x16 single-class problems.
pub fn gradient_suite(seed: u64, instances: usize) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = LossWeights::default();
    let mut worst = [0.0f64; 4];
    for _ in 0..instances {
        let (logits, gt) = random_instance(&mut rng);
        let probs = logits.sigmoid();

        let bce = weighted_bce(&probs, gt.boundaries(), &weights).unwrap();
        let e = max_relative_error(&bce.gradient, &logits, |z| {
            weighted_bce(&z.sigmoid(), gt.boundaries(), &weights).unwrap().value
        });
        worst[0] = worst[0].max(e);

        let nms = nms_loss(&probs, &gt, &weights).unwrap();
        assert!(nms.pixels > 0);
        let e = max_relative_error(&nms.gradient, &logits, |z| {
            nms_loss(&z.sigmoid(), &gt, &weights).unwrap().value
        });
        worst[1] = worst[1].max(e);

        let dir = direction_loss(&probs, &gt, &weights).unwrap();
        assert!(dir.pixels > 0);
        let e = max_relative_error(&dir.gradient, &logits, |z| {
            direction_loss(&z.sigmoid(), &gt, &weights).unwrap().value
        });
        worst[2] = worst[2].max(e);

        let total = total_loss(&logits, &gt, &weights).unwrap();
        let e = max_relative_error(&total.gradient, &logits, |z| {
            total_loss(z, &gt, &weights).unwrap().total
        });
        worst[3] = worst[3].max(e);
    }
    worst
}
