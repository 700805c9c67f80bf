//! Coarse-annotation simulation (erode, then simplify), click counting,
//! boundary error, and coarse-to-fine refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levelset::{compute_g, evolve, EvolutionParams};
use crate::metrics::iou;
use crate::raster::{
    distance_transform, erode, largest_component, mask_to_boundary, polygon_to_mask, trace_contours, BinaryMask,
    Polygon, ScalarField, StructuringElement,
};

/// RDP iterations of the epsilon search in [`simulate_coarse`].
pub const EPSILON_SEARCH_ITERATIONS: usize = 12;
/// Relative band around the target error accepted by the epsilon search.
pub const ERROR_BAND: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct CoarseResult {
    /// Always a subset of the fine mask.
    pub coarse_mask: BinaryMask,
    pub polygon: Polygon,
    /// Vertex count of `polygon`.
    pub clicks: usize,
    pub achieved_error_px: f64,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseReport {
    pub clicks: usize,
    pub achieved_error_px: f64,
    pub iou_vs_fine: f64,
}

impl CoarseResult {
    pub fn report(&self, fine: &BinaryMask) -> CoarseReport {
        CoarseReport {
            clicks: self.clicks,
            achieved_error_px: self.achieved_error_px,
            iou_vs_fine: iou(&self.coarse_mask, fine),
        }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (p[0] - a[0]).hypot(p[1] - a[1]);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Marks kept vertices of the chain `idx` (indices into `v`), endpoints
/// excluded.
fn rdp(v: &[[f64; 2]], idx: &[usize], epsilon: f64, keep: &mut [bool]) {
    if idx.len() < 3 {
        return;
    }
    let (a, b) = (v[idx[0]], v[idx[idx.len() - 1]]);
    let (far, dist) = idx[1..idx.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, &k)| (i + 1, segment_distance(v[k], a, b)))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if dist > epsilon {
        keep[idx[far]] = true;
        rdp(v, &idx[..=far], epsilon, keep);
        rdp(v, &idx[far..], epsilon, keep);
    }
}

/// Ramer–Douglas–Peucker on a closed polygon, split at its two farthest-apart
/// vertices. Kept vertices retain their original order; at least three are
/// always kept.
pub fn simplify_polygon(poly: &Polygon, epsilon: f64) -> Result<Polygon> {
    if !(epsilon >= 0.0) {
        return Err(Error::param(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let v = poly.vertices();
    let n = v.len();
    if epsilon == 0.0 || n <= 3 {
        return Ok(poly.clone());
    }
    let (mut i0, mut j0, mut best) = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = (v[i][0] - v[j][0]).hypot(v[i][1] - v[j][1]);
            if d > best {
                (i0, j0, best) = (i, j, d);
            }
        }
    }
    let mut keep = vec![false; n];
    keep[i0] = true;
    keep[j0] = true;
    let first: Vec<usize> = (i0..=j0).collect();
    let second: Vec<usize> = (j0..n).chain(0..=i0).collect();
    rdp(v, &first, epsilon, &mut keep);
    rdp(v, &second, epsilon, &mut keep);
    if keep.iter().filter(|&&k| k).count() < 3 {
        let (a, b) = (v[i0], v[j0]);
        let far = (0..n)
            .filter(|&k| !keep[k])
            .max_by(|&p, &q| segment_distance(v[p], a, b).total_cmp(&segment_distance(v[q], a, b)))
            .expect("more than three vertices");
        keep[far] = true;
    }
    let out = v.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
    Polygon::new(out, poly.is_closed())
}

/// `½(mean_{p∈∂a} d(p, ∂b) + mean_{q∈∂b} d(q, ∂a))`.
pub fn boundary_error(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_shape(b)?;
    if !a.any() || !b.any() {
        return Err(Error::NoForeground);
    }
    let (ba, bb) = (mask_to_boundary(a), mask_to_boundary(b));
    let mean_to = |from: &BinaryMask, to: &BinaryMask| -> Result<f64> {
        let d = distance_transform(to)?;
        let pts = from.points();
        Ok(pts.iter().map(|&(x, y)| d.get(0, x, y)).sum::<f64>() / pts.len() as f64)
    };
    Ok(0.5 * (mean_to(&ba, &bb)? + mean_to(&bb, &ba)?))
}

struct Candidate {
    mask: BinaryMask,
    polygon: Polygon,
    error: f64,
    epsilon: f64,
}

/// Emulates a few-click annotation with roughly `target_err_px` mean boundary
/// error: erode by a disc of radius `⌈target/2⌉`, polygonize the largest
/// component, then pick the RDP tolerance whose result lands closest to the
/// target. Among candidates inside the ±20% band the largest tolerance wins.
pub fn simulate_coarse(fine: &BinaryMask, target_err_px: f64) -> Result<CoarseResult> {
    if !(target_err_px >= 1.0) || !target_err_px.is_finite() {
        return Err(Error::param(format!("target error must be >= 1, got {target_err_px}")));
    }
    if !fine.any() {
        return Err(Error::NoForeground);
    }
    let radius = (target_err_px / 2.0).ceil() as u32;
    let eroded = erode(fine, StructuringElement::disc(radius)?);
    let component = largest_component(&eroded).ok_or(Error::BelowCoarseningScale)?;
    let outline = trace_contours(&component)
        .into_iter()
        .filter(|c| !c.is_hole)
        .map(|c| c.polygon)
        .max_by(|a, b| a.signed_area().abs().total_cmp(&b.signed_area().abs()))
        .ok_or(Error::BelowCoarseningScale)?;
    if outline.len() < 3 {
        return Err(Error::BelowCoarseningScale);
    }

    let (w, h) = (fine.width(), fine.height());
    let evaluate = |epsilon: f64| -> Result<Option<Candidate>> {
        let polygon = simplify_polygon(&outline, epsilon)?;
        let mask = polygon_to_mask(&polygon, w, h)?.and(fine);
        if !mask.any() {
            return Ok(None);
        }
        let error = boundary_error(&mask, fine)?;
        Ok(Some(Candidate {
            mask,
            polygon,
            error,
            epsilon,
        }))
    };

    let in_band = |e: f64| (e - target_err_px).abs() <= ERROR_BAND * target_err_px;
    let better = |new: &Candidate, old: &Candidate| match (in_band(new.error), in_band(old.error)) {
        (true, true) => new.epsilon > old.epsilon,
        (true, false) => true,
        (false, true) => false,
        (false, false) => {
            let (dn, dold) = ((new.error - target_err_px).abs(), (old.error - target_err_px).abs());
            dn < dold || (dn == dold && new.epsilon > old.epsilon)
        }
    };

    let mut best = evaluate(0.0)?.ok_or(Error::BelowCoarseningScale)?;
    let (mut lo, mut hi) = (0.0, 4.0 * target_err_px);
    for _ in 0..EPSILON_SEARCH_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let Some(c) = evaluate(mid)? else {
            hi = mid;
            continue;
        };
        if c.error < target_err_px {
            lo = mid;
        } else {
            hi = mid;
        }
        if better(&c, &best) {
            best = c;
        }
    }
    Ok(CoarseResult {
        clicks: best.polygon.len(),
        coarse_mask: best.mask,
        polygon: best.polygon,
        achieved_error_px: best.error,
        epsilon: best.epsilon,
    })
}

/// Grows `coarse` onto the ridges of `pred` with the coarse-to-fine
/// defaults for at most `steps` steps.
pub fn refine_coarse(coarse: &BinaryMask, pred: &ScalarField, steps: usize) -> Result<BinaryMask> {
    refine_coarse_with(
        coarse,
        pred,
        &EvolutionParams {
            max_steps: steps.max(1),
            snapshot_every: steps.clamp(1, 5),
            ..EvolutionParams::coarse_to_fine()
        },
        steps,
    )
}

/// As [`refine_coarse`] with explicit evolution parameters; `lambda` is
/// ignored and treated as 0.
pub fn refine_coarse_with(
    coarse: &BinaryMask,
    pred: &ScalarField,
    params: &EvolutionParams,
    steps: usize,
) -> Result<BinaryMask> {
    if !coarse.any() {
        return Err(Error::NoForeground);
    }
    if pred.channels() != 1 || pred.width() != coarse.width() || pred.height() != coarse.height() {
        return Err(Error::shape(
            format!("{}x{}x1", coarse.width(), coarse.height()),
            pred.dims_str(),
        ));
    }
    if steps == 0 {
        return Ok(coarse.clone());
    }
    let params = EvolutionParams {
        lambda: 0.0,
        max_steps: steps,
        snapshot_every: params.snapshot_every.min(steps),
        ..*params
    };
    let g = compute_g(pred, None, 0.0)?;
    Ok(evolve(coarse, &g, &params)?.final_state.u)
}
