//! Training objectives on boundary logits: class-balanced BCE, the softmax
//! along GT normals ("NMS loss") and the normal-direction loss.
//!
//! Every loss returns its value together with the exact gradient with respect
//! to the pre-sigmoid logits that produced the probabilities.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::normals::{self, angular_difference, hessian, hessian_adjoint, hessian_orientation, NormalField};
use crate::raster::{mask_to_boundary, BinaryMask, ScalarField, Tap};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaMode {
    /// Fraction of non-edge pixels over all classes of the call.
    Auto,
    Fixed(f64),
}

impl Serialize for BetaMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BetaMode::Auto => s.serialize_str("auto"),
            BetaMode::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for BetaMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Value(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(s) if s == "auto" => Ok(BetaMode::Auto),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "beta must be \"auto\" or a number, got {s:?}"
            ))),
            Raw::Value(v) => Ok(BetaMode::Fixed(v)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Softmax temperature along the normal line.
    pub tau: f64,
    /// Half-length of the normal line, in samples.
    #[serde(rename = "L")]
    pub half_length: usize,
    pub beta: BetaMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 10.0,
            alpha3: 1.0,
            tau: 0.1,
            half_length: 2,
            beta: BetaMode::Auto,
        }
    }
}

impl LossWeights {
    pub fn with_alphas(alpha1: f64, alpha2: f64, alpha3: f64) -> Self {
        Self {
            alpha1,
            alpha2,
            alpha3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let alphas = [self.alpha1, self.alpha2, self.alpha3];
        if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::param("loss weights must be finite and >= 0"));
        }
        if alphas.iter().all(|&a| a == 0.0) {
            return Err(Error::param("at least one loss weight must be positive"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::param(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.half_length == 0 {
            return Err(Error::param("L must be >= 1"));
        }
        if let BetaMode::Fixed(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::param(format!("fixed beta must lie in [0, 1], got {b}")));
            }
        }
        Ok(())
    }
}

/// Per-class boundary maps with their (cached) normal fields.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    boundaries: Vec<BinaryMask>,
    normals: Vec<NormalField>,
    sigma: f64,
}

impl GroundTruth {
    /// Computes normals at the default scale.
    pub fn new(boundaries: Vec<BinaryMask>) -> Result<Self> {
        Self::with_sigma(boundaries, normals::DEFAULT_NORMAL_SIGMA)
    }

    pub fn with_sigma(boundaries: Vec<BinaryMask>, sigma: f64) -> Result<Self> {
        let first = boundaries
            .first()
            .ok_or_else(|| Error::param("ground truth needs at least one class"))?;
        for b in &boundaries[1..] {
            first.check_shape(b)?;
        }
        let normals = boundaries
            .iter()
            .map(|b| normals::estimate_normals(&ScalarField::from(b), sigma))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            boundaries,
            normals,
            sigma,
        })
    }

    /// Boundaries derived from per-class region masks.
    pub fn from_regions(regions: &[BinaryMask]) -> Result<Self> {
        Self::new(regions.iter().map(mask_to_boundary).collect())
    }

    pub fn boundaries(&self) -> &[BinaryMask] {
        &self.boundaries
    }

    pub fn normals(&self) -> &[NormalField] {
        &self.normals
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn classes(&self) -> usize {
        self.boundaries.len()
    }

    pub fn positives(&self) -> usize {
        self.boundaries.iter().map(BinaryMask::count).sum()
    }

    fn check(&self, pred: &ScalarField) -> Result<()> {
        let b = &self.boundaries[0];
        if pred.channels() != self.classes() || pred.width() != b.width() || pred.height() != b.height() {
            return Err(Error::shape(
                format!("{}x{}x{}", b.width(), b.height(), self.classes()),
                pred.dims_str(),
            ));
        }
        Ok(())
    }
}

/// One loss term: value, gradient w.r.t. logits, and bookkeeping.
#[derive(Clone, Debug)]
pub struct LossTerm {
    pub value: f64,
    pub gradient: ScalarField,
    /// Pixels that contributed.
    pub pixels: usize,
    /// Boundary pixels dropped because their normal line left the image.
    pub skipped: usize,
}

impl LossTerm {
    fn zero_like(pred: &ScalarField) -> Self {
        Self {
            value: 0.0,
            gradient: ScalarField::zeros(pred.width(), pred.height(), pred.channels()),
            pixels: 0,
            skipped: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub nms: f64,
    pub dir: f64,
    pub total: f64,
    #[serde(skip)]
    pub gradient: ScalarField,
    pub positives: usize,
    pub nms_pixels: usize,
    pub nms_skipped: usize,
    pub dir_pixels: usize,
}

impl LossBreakdown {
    /// `(bce, nms, dir)` divided by the number of positive boundary pixels.
    pub fn per_positive(&self) -> [f64; 3] {
        let n = self.positives.max(1) as f64;
        [self.bce / n, self.nms / n, self.dir / n]
    }
}

fn dlogit(p: f64) -> f64 {
    p * (1.0 - p)
}

/// Class-balanced binary cross-entropy. `pred` holds probabilities, one
/// channel per class; `gt` the per-class boundary labels.
pub fn weighted_bce(pred: &ScalarField, gt: &[BinaryMask], weights: &LossWeights) -> Result<LossTerm> {
    if gt.len() != pred.channels() {
        return Err(Error::shape(format!("{} classes", pred.channels()), gt.len()));
    }
    for m in gt {
        if m.width() != pred.width() || m.height() != pred.height() {
            return Err(Error::shape(pred.dims_str(), format!("{}x{}", m.width(), m.height())));
        }
    }
    let beta = match weights.beta {
        BetaMode::Fixed(b) => b,
        BetaMode::Auto => {
            let total = (pred.plane_len() * gt.len()) as f64;
            let edges: usize = gt.iter().map(BinaryMask::count).sum();
            if total == 0.0 {
                0.0
            } else {
                (total - edges as f64) / total
            }
        }
    };
    let mut term = LossTerm::zero_like(pred);
    let mut value = 0.0;
    for (k, labels) in gt.iter().enumerate() {
        let probs = pred.plane(k);
        let grad = term.gradient.plane_mut(k);
        for ((g, &p), &y) in grad.iter_mut().zip(probs).zip(labels.bits()) {
            let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let inside = clamped == p;
            if y {
                value -= beta * clamped.ln();
                if inside {
                    // d/dz [-β log σ(z)] = -β (1 - σ)
                    *g = -beta * (1.0 - p);
                }
            } else {
                value -= (1.0 - beta) * (1.0 - clamped).ln();
                if inside {
                    *g = (1.0 - beta) * p;
                }
            }
        }
    }
    term.value = value;
    term.pixels = pred.len();
    Ok(term)
}

/// Sample points along a boundary normal.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLine {
    pub center: (usize, usize),
    pub angle: f64,
    /// `-L..=L`
    pub offsets: Vec<isize>,
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    taps: Vec<[Tap; 4]>,
}

impl SampleLine {
    /// Samples `field` channel `channel` at `center + t (cos θ, sin θ)` for
    /// `t ∈ -L..=L`. Fails when any point leaves the image.
    pub fn new(
        field: &ScalarField,
        channel: usize,
        center: (usize, usize),
        angle: f64,
        half_length: usize,
    ) -> Result<Self> {
        let l = half_length as isize;
        let (c, s) = (angle.cos(), angle.sin());
        let offsets: Vec<isize> = (-l..=l).collect();
        let mut points = Vec::with_capacity(offsets.len());
        let mut values = Vec::with_capacity(offsets.len());
        let mut taps = Vec::with_capacity(offsets.len());
        let plane = field.plane(channel);
        for &t in &offsets {
            let p = if t == 0 {
                [center.0 as f64, center.1 as f64]
            } else {
                [center.0 as f64 + t as f64 * c, center.1 as f64 + t as f64 * s]
            };
            let tp = field.bilinear_taps(p[0], p[1])?;
            values.push(tp.iter().map(|t| t.weight * plane[t.y * field.width() + t.x]).sum());
            points.push(p);
            taps.push(tp);
        }
        Ok(Self {
            center,
            angle,
            offsets,
            points,
            values,
            taps,
        })
    }

    /// Softmax of the sampled values at temperature `tau`.
    pub fn softmax(&self, tau: f64) -> Vec<f64> {
        softmax(&self.values, tau)
    }
}

fn softmax(values: &[f64], tau: f64) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Categorical distribution `h` over the `2L+1` samples along the GT normal
/// at boundary pixel `p`.
pub fn nms_response(
    pred: &ScalarField,
    channel: usize,
    gt_normals: &NormalField,
    p: (usize, usize),
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    let angle = gt_normals
        .get(p.0, p.1)
        .ok_or_else(|| Error::param(format!("no normal at pixel {p:?}")))?;
    let line = SampleLine::new(pred, channel, p, angle, weights.half_length)?;
    Ok(line.softmax(weights.tau))
}

/// `-Σ log h(p)` over positive GT boundary pixels, `h` taken at the centre
/// sample. Lines that leave the image are skipped and counted.
pub fn nms_loss(pred: &ScalarField, gt: &GroundTruth, weights: &LossWeights) -> Result<LossTerm> {
    gt.check(pred)?;
    let (w, h) = (pred.width(), pred.height());
    let per_class: Vec<(f64, Vec<f64>, usize, usize)> = (0..gt.classes())
        .into_par_iter()
        .map(|k| {
            let mut grad_p = vec![0.0; w * h];
            let (mut value, mut used, mut skipped) = (0.0, 0, 0);
            let normals = &gt.normals[k];
            for (x, y) in gt.boundaries[k].points() {
                let Some(angle) = normals.get(x, y) else {
                    continue;
                };
                let Ok(line) = SampleLine::new(pred, k, (x, y), angle, weights.half_length) else {
                    skipped += 1;
                    continue;
                };
                let hs = line.softmax(weights.tau);
                let centre = weights.half_length;
                value -= hs[centre].ln();
                used += 1;
                for (t, (taps, &ht)) in line.taps.iter().zip(&hs).enumerate() {
                    let d = (ht - if t == centre { 1.0 } else { 0.0 }) / weights.tau;
                    for tap in taps {
                        grad_p[tap.y * w + tap.x] += d * tap.weight;
                    }
                }
            }
            (value, grad_p, used, skipped)
        })
        .collect();

    let mut term = LossTerm::zero_like(pred);
    for (k, (value, grad_p, used, skipped)) in per_class.into_iter().enumerate() {
        term.value += value;
        term.pixels += used;
        term.skipped += skipped;
        let probs = pred.plane(k);
        for ((g, dp), &p) in term.gradient.plane_mut(k).iter_mut().zip(grad_p).zip(probs) {
            *g = dp * dlogit(p);
        }
    }
    Ok(term)
}

/// Sum over positive GT boundary pixels of the angle between the GT normal
/// and the normal estimated from the prediction with the same filters.
pub fn direction_loss(pred: &ScalarField, gt: &GroundTruth, _weights: &LossWeights) -> Result<LossTerm> {
    gt.check(pred)?;
    let (w, h) = (pred.width(), pred.height());
    let sigma = gt.sigma;
    let per_class: Vec<(f64, Vec<f64>, usize)> = (0..gt.classes())
        .into_par_iter()
        .map(|k| {
            let hess = hessian(pred.plane(k), w, h, sigma);
            let mut seeds = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
            let (mut value, mut used) = (0.0, 0);
            for (x, y) in gt.boundaries[k].points() {
                let Some(target) = gt.normals[k].get(x, y) else {
                    continue;
                };
                let i = y * w + x;
                if hess.smoothed[i] <= normals::SUPPORT_THRESHOLD {
                    continue;
                }
                let Some((theta, dtheta)) = hessian_orientation(hess.xx[i], hess.xy[i], hess.yy[i]) else {
                    continue;
                };
                used += 1;
                value += angular_difference(theta, target);
                // The angle gap is |θ - θ_gt| after wrapping into (-π/2, π/2].
                let d = (theta - target).rem_euclid(std::f64::consts::PI);
                let slope = if d == 0.0 {
                    0.0
                } else if d <= std::f64::consts::FRAC_PI_2 {
                    1.0
                } else {
                    -1.0
                };
                for (seed, dj) in seeds.iter_mut().zip(dtheta) {
                    seed[i] += slope * dj;
                }
            }
            let grad_p = if used > 0 {
                hessian_adjoint(&seeds[0], &seeds[1], &seeds[2], w, h, sigma)
            } else {
                vec![0.0; w * h]
            };
            (value, grad_p, used)
        })
        .collect();

    let mut term = LossTerm::zero_like(pred);
    for (k, (value, grad_p, used)) in per_class.into_iter().enumerate() {
        term.value += value;
        term.pixels += used;
        let probs = pred.plane(k);
        for ((g, dp), &p) in term.gradient.plane_mut(k).iter_mut().zip(grad_p).zip(probs) {
            *g = dp * dlogit(p);
        }
    }
    Ok(term)
}

/// `α1·BCE + α2·NMS + α3·dir` on `sigmoid(logits)`, with the combined
/// gradient w.r.t. the logits. Terms with zero weight are not evaluated.
pub fn total_loss(logits: &ScalarField, gt: &GroundTruth, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    gt.check(logits)?;
    let probs = logits.sigmoid();
    let zero = || Ok::<_, Error>(LossTerm::zero_like(&probs));
    let bce = if weights.alpha1 > 0.0 {
        weighted_bce(&probs, &gt.boundaries, weights)?
    } else {
        zero()?
    };
    let nms = if weights.alpha2 > 0.0 {
        nms_loss(&probs, gt, weights)?
    } else {
        zero()?
    };
    let dir = if weights.alpha3 > 0.0 {
        direction_loss(&probs, gt, weights)?
    } else {
        zero()?
    };
    let total = weights.alpha1 * bce.value + weights.alpha2 * nms.value + weights.alpha3 * dir.value;
    let mut gradient = bce.gradient;
    for ((g, gn), gd) in gradient
        .values_mut()
        .iter_mut()
        .zip(nms.gradient.values())
        .zip(dir.gradient.values())
    {
        *g = weights.alpha1 * *g + weights.alpha2 * gn + weights.alpha3 * gd;
    }
    Ok(LossBreakdown {
        bce: bce.value,
        nms: nms.value,
        dir: dir.value,
        total,
        gradient,
        positives: gt.positives(),
        nms_pixels: nms.pixels,
        nms_skipped: nms.skipped,
        dir_pixels: dir.pixels,
    })
}
