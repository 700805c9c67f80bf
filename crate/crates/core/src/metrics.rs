//! Boundary evaluation: tolerance-based one-to-one matching, precision/recall
//! sweeps, MF(ODS), AP, IoU, and test-time edge thinning.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normals::{estimate_normals, NormalField, DEFAULT_NORMAL_SIGMA};
use crate::raster::{BinaryMask, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Matching radius as a fraction of the image diagonal.
    pub tolerance_fraction: f64,
    pub thin_predictions: bool,
    /// Thresholds are `i / (n + 1)` for `i = 1..=n`.
    pub thresholds: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            tolerance_fraction: 0.0075,
            thin_predictions: true,
            thresholds: 99,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_fraction > 0.0) || !self.tolerance_fraction.is_finite() {
            return Err(Error::param("tolerance_fraction must be > 0"));
        }
        if self.thresholds == 0 {
            return Err(Error::param("at least one threshold is required"));
        }
        Ok(())
    }

    pub fn threshold_values(&self) -> Vec<f64> {
        let n = self.thresholds;
        (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
    }

    pub fn d_max(&self, width: usize, height: usize) -> f64 {
        self.tolerance_fraction * (width as f64).hypot(height as f64)
    }
}

/// `|a∩b| / |a∪b|`; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.and(b).count();
    let union = a.or(b).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Keeps `f(p)` where it is at least both bilinear samples at `p ± n(p)`,
/// zeroes it elsewhere. Pixels without a valid normal are kept; neighbours
/// outside the image do not suppress.
pub fn nms_thin(pred: &ScalarField, normals: &NormalField) -> Result<ScalarField> {
    if pred.channels() != 1 {
        return Err(Error::shape("1 channel", pred.channels()));
    }
    if normals.width() != pred.width() || normals.height() != pred.height() {
        return Err(Error::shape(
            pred.dims_str(),
            format!("{}x{}", normals.width(), normals.height()),
        ));
    }
    let mut out = pred.clone();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let Some(theta) = normals.get(x, y) else {
                continue;
            };
            let f = pred.get(0, x, y);
            let (s, c) = theta.sin_cos();
            let beaten = [1.0, -1.0]
                .iter()
                .any(|&k| pred.sample(0, x as f64 + k * c, y as f64 + k * s).is_ok_and(|v| v > f));
            if beaten {
                out.set(0, x, y, 0.0);
            }
        }
    }
    Ok(out)
}

/// Maximum-cardinality one-to-one matching between `pred` and `gt` pixels
/// no farther apart than `d_max` (Hopcroft–Karp). Returns
/// `(matched_pred, matched_gt)`, which are equal.
pub fn match_boundaries(pred: &BinaryMask, gt: &BinaryMask, d_max: f64) -> Result<(usize, usize)> {
    pred.check_shape(gt)?;
    if !(d_max > 0.0) {
        return Err(Error::param(format!("d_max must be > 0, got {d_max}")));
    }
    let size = Matcher::new(pred, gt, d_max).max_matching();
    Ok((size, size))
}

const FREE: usize = usize::MAX;

struct Matcher {
    adj: Vec<Vec<usize>>,
    right: usize,
}

impl Matcher {
    fn new(pred: &BinaryMask, gt: &BinaryMask, d_max: f64) -> Self {
        let (w, h) = (gt.width(), gt.height());
        let mut gt_index = vec![FREE; w * h];
        let mut right = 0;
        for (x, y) in gt.points() {
            gt_index[y * w + x] = right;
            right += 1;
        }
        let reach = d_max.floor() as isize;
        let d2 = d_max * d_max;
        let adj = pred
            .points()
            .into_iter()
            .map(|(px, py)| {
                let mut edges = Vec::new();
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        if ((dx * dx + dy * dy) as f64) > d2 {
                            continue;
                        }
                        let (qx, qy) = (px as isize + dx, py as isize + dy);
                        if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                            continue;
                        }
                        let j = gt_index[qy as usize * w + qx as usize];
                        if j != FREE {
                            edges.push(j);
                        }
                    }
                }
                edges
            })
            .collect();
        Self { adj, right }
    }

    fn max_matching(&self) -> usize {
        let n = self.adj.len();
        let mut match_l = vec![FREE; n];
        let mut match_r = vec![FREE; self.right];
        let mut dist = vec![0usize; n];
        let mut size = 0;
        loop {
            // layered BFS from free left vertices
            let mut queue = VecDeque::new();
            for u in 0..n {
                if match_l[u] == FREE {
                    dist[u] = 0;
                    queue.push_back(u);
                } else {
                    dist[u] = usize::MAX;
                }
            }
            let mut found = false;
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    let w = match_r[v];
                    if w == FREE {
                        found = true;
                    } else if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
            if !found {
                return size;
            }
            let mut cursor = vec![0usize; n];
            for u in 0..n {
                if match_l[u] == FREE && self.augment(u, &mut match_l, &mut match_r, &mut dist, &mut cursor) {
                    size += 1;
                }
            }
        }
    }

    /// Iterative DFS along the BFS layers.
    fn augment(
        &self,
        root: usize,
        match_l: &mut [usize],
        match_r: &mut [usize],
        dist: &mut [usize],
        cursor: &mut [usize],
    ) -> bool {
        let mut stack = vec![root];
        while let Some(&u) = stack.last() {
            if cursor[u] == self.adj[u].len() {
                dist[u] = usize::MAX;
                stack.pop();
                continue;
            }
            let v = self.adj[u][cursor[u]];
            let w = match_r[v];
            if w == FREE {
                // flip the path
                for &l in stack.iter().rev() {
                    let r = self.adj[l][cursor[l]];
                    match_l[l] = r;
                    match_r[r] = l;
                }
                return true;
            }
            if dist[w] != usize::MAX && dist[w] == dist[u] + 1 {
                stack.push(w);
            } else {
                cursor[u] += 1;
            }
        }
        false
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    matched_pred: usize,
    total_pred: usize,
    matched_gt: usize,
    total_gt: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            matched_pred: self.matched_pred + o.matched_pred,
            total_pred: self.total_pred + o.total_pred,
            matched_gt: self.matched_gt + o.matched_gt,
            total_gt: self.total_gt + o.total_gt,
        }
    }
}

/// Precision is 0 when nothing is predicted; recall is 0 when there is no GT.
pub fn precision_recall(matched_pred: usize, total_pred: usize, matched_gt: usize, total_gt: usize) -> (f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(matched_pred, total_pred), ratio(matched_gt, total_gt))
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Area under the interpolated PR curve (precision made non-increasing in
/// recall) with an added `R = 0` endpoint. Points are `(recall, precision)`.
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.push((0.0, 0.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut interp = vec![0.0; pts.len()];
    let mut best: f64 = 0.0;
    for i in (0..pts.len()).rev() {
        best = best.max(pts[i].1);
        interp[i] = best;
    }
    pts.windows(2)
        .zip(&interp[1..])
        .map(|(w, &p)| (w[1].0 - w[0].0) * p)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: usize,
    /// `None` when the class has no GT boundary pixel in the dataset.
    pub mf_ods: Option<f64>,
    pub ap: Option<f64>,
    pub optimal_threshold: Option<f64>,
    pub gt_pixels: usize,
    /// `[threshold, precision, recall]` rows.
    pub pr: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub classes: Vec<ClassResult>,
    pub mean_mf_ods: Option<f64>,
    pub mean_ap: Option<f64>,
    pub params: MatchParams,
}

impl EvalResult {
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("class,threshold,precision,recall\n");
        for c in &self.classes {
            for [t, p, r] in &c.pr {
                let _ = writeln!(out, "{},{t},{p},{r}", c.class);
            }
        }
        out
    }
}

fn image_counts(
    pred: &ScalarField,
    gt: &[BinaryMask],
    params: &MatchParams,
    thresholds: &[f64],
) -> Result<Vec<Vec<Counts>>> {
    if gt.len() != pred.channels() {
        return Err(Error::shape(
            format!("{} classes", pred.channels()),
            format!("{} GT maps", gt.len()),
        ));
    }
    let d_max = params.d_max(pred.width(), pred.height());
    (0..pred.channels())
        .map(|k| {
            gt[k].check_shape(&BinaryMask::new(pred.width(), pred.height()))?;
            let mut plane = pred.channel(k);
            if params.thin_predictions {
                let normals = estimate_normals(&plane, DEFAULT_NORMAL_SIGMA)?;
                plane = nms_thin(&plane, &normals)?;
            }
            let total_gt = gt[k].count();
            thresholds
                .iter()
                .map(|&t| {
                    let binary = plane.threshold(0, t);
                    let (m, _) = match_boundaries(&binary, &gt[k], d_max)?;
                    Ok(Counts {
                        matched_pred: m,
                        total_pred: binary.count(),
                        matched_gt: m,
                        total_gt,
                    })
                })
                .collect()
        })
        .collect()
}

/// Dataset-level precision/recall per class and threshold, MF(ODS) and AP.
/// `preds[i]` holds one probability channel per class; `gts[i][k]` the GT
/// boundary of class `k` in image `i`.
pub fn evaluate_dataset(preds: &[ScalarField], gts: &[Vec<BinaryMask>], params: &MatchParams) -> Result<EvalResult> {
    params.validate()?;
    if preds.len() != gts.len() {
        return Err(Error::shape(
            format!("{} images", preds.len()),
            format!("{} GT entries", gts.len()),
        ));
    }
    let classes = preds.first().map_or(0, ScalarField::channels);
    if let Some(p) = preds.iter().find(|p| p.channels() != classes) {
        return Err(Error::shape(format!("{classes} channels"), p.channels()));
    }
    let thresholds = params.threshold_values();
    let per_image: Vec<Vec<Vec<Counts>>> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| image_counts(p, g, params, &thresholds))
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(classes);
    for k in 0..classes {
        let totals: Vec<Counts> = (0..thresholds.len())
            .map(|ti| per_image.iter().fold(Counts::default(), |acc, img| acc + img[k][ti]))
            .collect();
        let gt_pixels = totals.first().map_or(0, |c| c.total_gt);
        let pr: Vec<[f64; 3]> = thresholds
            .iter()
            .zip(&totals)
            .map(|(&t, c)| {
                let (p, r) = precision_recall(c.matched_pred, c.total_pred, c.matched_gt, c.total_gt);
                [t, p, r]
            })
            .collect();
        let (mf_ods, ap, optimal_threshold) = if gt_pixels == 0 {
            (None, None, None)
        } else {
            let (best_t, best_f) = pr
                .iter()
                .map(|&[t, p, r]| (t, f_measure(p, r)))
                .fold((thresholds[0], f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let points: Vec<(f64, f64)> = pr.iter().map(|&[_, p, r]| (r, p)).collect();
            (Some(best_f), Some(average_precision(&points)), Some(best_t))
        };
        results.push(ClassResult {
            class: k,
            mf_ods,
            ap,
            optimal_threshold,
            gt_pixels,
            pr,
        });
    }
    let mean = |f: fn(&ClassResult) -> Option<f64>| {
        let vals: Vec<f64> = results.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(EvalResult {
        mean_mf_ods: mean(|c| c.mf_ods),
        mean_ap: mean(|c| c.ap),
        classes: results,
        params: *params,
    })
}
