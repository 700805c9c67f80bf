//! Desk-scale learning loop: gradient descent on a free per-pixel logit field
//! under the combined loss, alternating with active alignment of the working
//! ground truth.

use serde::{Deserialize, Serialize};

use crate::coarse::boundary_error;
use crate::error::{Error, Result};
use crate::levelset::{active_align, EvolutionParams};
use crate::losses::{total_loss, BetaMode, GroundTruth, LossWeights};
use crate::normals::NormalField;
use crate::raster::{BinaryMask, ScalarField};

/// Total loss above which training aborts.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// From `iteration` on, BCE uses the fixed class weight `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSwitch {
    pub iteration: usize,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Iterations during which the ground truth stays fixed.
    pub align_warmup: usize,
    pub align_every: usize,
    /// `false` keeps the ground truth fixed for the whole run.
    pub align: bool,
    pub evolution: EvolutionParams,
    pub beta_switch: Option<BetaSwitch>,
    /// Seed of the task generator; recorded, never consumed by [`train`].
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.5,
            weights: LossWeights::default(),
            align_warmup: 0,
            align_every: 50,
            align: true,
            evolution: EvolutionParams::alignment(),
            beta_switch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate must be finite and >= 0"));
        }
        if self.align_warmup > self.iterations {
            return Err(Error::param("align_warmup must not exceed iterations"));
        }
        if self.align_every == 0 {
            return Err(Error::param("align_every must be >= 1"));
        }
        if let Some(s) = self.beta_switch {
            if !(0.0..=1.0).contains(&s.beta) {
                return Err(Error::param("scheduled beta must lie in [0, 1]"));
            }
        }
        self.weights.validate()?;
        self.evolution.validate()
    }

    fn weights_at(&self, iteration: usize) -> LossWeights {
        match self.beta_switch {
            Some(s) if iteration >= s.iteration => LossWeights {
                beta: BetaMode::Fixed(s.beta),
                ..self.weights
            },
            _ => self.weights,
        }
    }

    fn aligns_at(&self, iteration: usize) -> bool {
        self.align && iteration >= self.align_warmup && (iteration - self.align_warmup).is_multiple_of(self.align_every)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub bce: f64,
    pub nms: f64,
    pub dir: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEvent {
    pub iteration: usize,
    pub chosen_t: usize,
    pub score_before: f64,
    pub score_after: f64,
    /// Boundary error of the working GT against the reference, if given.
    pub error_before: Option<f64>,
    pub error_after: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    /// One record per iteration, taken before that iteration's update.
    pub losses: Vec<LossRecord>,
    pub alignments: Vec<AlignmentEvent>,
    pub initial_error: Option<f64>,
    pub final_error: Option<f64>,
    #[serde(skip)]
    pub final_logits: ScalarField,
    #[serde(skip)]
    pub final_region: BinaryMask,
}

/// Gradient descent on `initial_logits` against the boundary of
/// `noisy_gt_region`. Each alignment iteration first replaces the working
/// region by the active-alignment argmin under the current prediction, then
/// takes the gradient step.
pub fn train(
    initial_logits: &ScalarField,
    noisy_gt_region: &BinaryMask,
    config: &TrainConfig,
    true_reference: Option<&BinaryMask>,
) -> Result<TrainReport> {
    config.validate()?;
    if initial_logits.channels() != 1
        || initial_logits.width() != noisy_gt_region.width()
        || initial_logits.height() != noisy_gt_region.height()
    {
        return Err(Error::shape(
            format!("{}x{}x1", noisy_gt_region.width(), noisy_gt_region.height()),
            initial_logits.dims_str(),
        ));
    }
    if let Some(r) = true_reference {
        noisy_gt_region.check_shape(r)?;
    }
    let error_vs_reference =
        |region: &BinaryMask| -> Result<Option<f64>> { true_reference.map(|r| boundary_error(region, r)).transpose() };

    let mut logits = initial_logits.clone();
    let mut region = noisy_gt_region.clone();
    let mut gt = GroundTruth::from_regions(std::slice::from_ref(&region))?;
    let initial_error = error_vs_reference(&region)?;
    let mut losses = Vec::with_capacity(config.iterations);
    let mut alignments = Vec::new();

    for iteration in 0..config.iterations {
        let weights = config.weights_at(iteration);
        if config.aligns_at(iteration) {
            let aligned = active_align(&region, &logits.sigmoid(), &config.evolution, &weights)?;
            let error_before = error_vs_reference(&region)?;
            let error_after = error_vs_reference(&aligned.region)?;
            alignments.push(AlignmentEvent {
                iteration,
                chosen_t: aligned.chosen_t,
                score_before: aligned.initial_score,
                score_after: aligned.chosen_score,
                error_before,
                error_after,
            });
            if aligned.region != region {
                region = aligned.region;
                gt = GroundTruth::from_regions(std::slice::from_ref(&region))?;
            }
        }
        let step = total_loss(&logits, &gt, &weights)?;
        if !(step.total <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                iteration,
                loss: step.total,
            });
        }
        losses.push(LossRecord {
            iteration,
            bce: step.bce,
            nms: step.nms,
            dir: step.dir,
            total: step.total,
        });
        if config.learning_rate > 0.0 {
            for (z, g) in logits.values_mut().iter_mut().zip(step.gradient.values()) {
                *z -= config.learning_rate * g;
            }
        }
    }
    Ok(TrainReport {
        seed: config.seed,
        losses,
        alignments,
        initial_error,
        final_error: error_vs_reference(&region)?,
        final_logits: logits,
        final_region: region,
    })
}

/// Mean of `pred` sampled at offsets `-2..=2` along the normal of every
/// valid boundary pixel whose whole profile lies inside the image.
pub fn sharpness_profile(pred: &ScalarField, gt_boundary: &BinaryMask, normals: &NormalField) -> Vec<f64> {
    let mut sum = [0.0; 5];
    let mut count = 0usize;
    for (x, y) in gt_boundary.points() {
        let Some(theta) = normals.get(x, y) else {
            continue;
        };
        let (s, c) = theta.sin_cos();
        let mut samples = [0.0; 5];
        let inside = (-2i32..=2).zip(samples.iter_mut()).all(|(k, out)| {
            let k = k as f64;
            match pred.sample(0, x as f64 + k * c, y as f64 + k * s) {
                Ok(v) => {
                    *out = v;
                    true
                }
                Err(_) => false,
            }
        });
        if inside {
            for (acc, v) in sum.iter_mut().zip(samples) {
                *acc += v;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    sum.iter().map(|v| v / n).collect()
}

/// `profile[2] / mean(profile[1], profile[3])`.
pub fn sharpness_ratio(profile: &[f64]) -> f64 {
    profile[2] / (0.5 * (profile[1] + profile[3]))
}

/// Logits of a probability map, with probabilities clamped to `[eps, 1-eps]`.
pub fn logits_from_probabilities(probs: &ScalarField, eps: f64) -> ScalarField {
    probs.map(|p| {
        let p = p.clamp(eps, 1.0 - eps);
        (p / (1.0 - p)).ln()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normals::estimate_normals;
    use crate::raster::mask_to_boundary;
    use crate::synthetic::disc;

    #[test]
    fn zero_learning_rate_is_identity() {
        let region = disc(24, 24, [11.5, 11.5], 6.0);
        let logits = ScalarField::filled(24, 24, 1, -1.0);
        let cfg = TrainConfig {
            iterations: 5,
            learning_rate: 0.0,
            align: false,
            ..Default::default()
        };
        let r = train(&logits, &region, &cfg, None).unwrap();
        assert_eq!(r.final_logits, logits);
        assert_eq!(r.losses.len(), 5);
        assert!(r.losses.windows(2).all(|w| w[0].total == w[1].total));
    }

    #[test]
    fn bce_fixed_point() {
        let region = disc(24, 24, [11.5, 11.5], 6.0);
        let boundary = mask_to_boundary(&region);
        let cfg = TrainConfig {
            iterations: 1500,
            weights: LossWeights::with_alphas(1.0, 0.0, 0.0),
            align: false,
            ..Default::default()
        };
        let r = train(&ScalarField::zeros(24, 24, 1), &region, &cfg, None).unwrap();
        let p = r.final_logits.sigmoid();
        let close = (0..24 * 24)
            .filter(|&i| {
                let target = boundary.bits()[i] as u8 as f64;
                (p.values()[i] - target).abs() <= 0.05
            })
            .count();
        assert!(close as f64 >= 0.99 * 576.0, "{close}");
    }

    #[test]
    fn divergence_guard() {
        let region = disc(16, 16, [7.5, 7.5], 4.0);
        let cfg = TrainConfig {
            iterations: 3,
            weights: LossWeights::with_alphas(1e6, 0.0, 0.0),
            align: false,
            ..Default::default()
        };
        let err = train(&ScalarField::zeros(16, 16, 1), &region, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn profile_of_delta_and_uniform() {
        let boundary = BinaryMask::from_fn(21, 21, |x, _| x == 10);
        let normals = estimate_normals(&ScalarField::from(&boundary), 1.5).unwrap();
        let delta = ScalarField::from(&boundary);
        let p = sharpness_profile(&delta, &boundary, &normals);
        assert!((p[2] - 1.0).abs() < 1e-9);
        for k in [0, 1, 3, 4] {
            assert!(p[k].abs() < 1e-9);
        }
        let flat = sharpness_profile(&ScalarField::filled(21, 21, 1, 0.3), &boundary, &normals);
        assert!(flat.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn config_validation_and_json() {
        assert!(TrainConfig {
            align_every: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            align_warmup: 600,
            ..Default::default()
        }
        .validate()
        .is_err());
        let cfg = TrainConfig {
            beta_switch: Some(BetaSwitch {
                iteration: 10,
                beta: 0.0,
            }),
            ..Default::default()
        };
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.weights_at(10).beta, BetaMode::Fixed(0.0));
        assert_eq!(cfg.weights_at(9).beta, BetaMode::Auto);
    }
}
