//! Morphological geodesic active contours on a binary embedding, and the
//! active-alignment procedure built on them.
//!
//! The embedding `u` is `true` inside the evolving region. One step applies,
//! in order: the balloon force (dilation or erosion by a 3x3 cross where the
//! speed is high), the attraction term (sign of `∇g·∇u`), and `mu` passes of
//! curvature smoothing with the SI/IS line operators. Curvature and the
//! contour normal never appear explicitly; the line operators and the
//! inside/outside convention of `u` carry them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{weighted_bce, LossWeights};
use crate::raster::{
    dilate, dilate_offsets, erode, erode_offsets, gaussian_smooth, io, mask_to_boundary, mask_to_contours, BinaryMask,
    Polygon, ScalarField, StructuringElement,
};

/// Consecutive unchanged steps after which an evolution stops early.
pub const STALL_STEPS: usize = 3;

/// Counts consecutive steps whose mask repeats one of the two previous
/// masks. Period-2 cycles from the alternating curvature passes therefore
/// count as unchanged.
#[derive(Clone, Debug)]
pub struct StallTracker {
    last: BinaryMask,
    before_last: Option<BinaryMask>,
    unchanged: usize,
}

impl StallTracker {
    pub fn new(initial: &BinaryMask) -> Self {
        Self {
            last: initial.clone(),
            before_last: None,
            unchanged: 0,
        }
    }

    /// Records the mask produced by one step; returns whether it is new.
    pub fn record(&mut self, mask: &BinaryMask) -> bool {
        let repeat = *mask == self.last || self.before_last.as_ref() == Some(mask);
        self.unchanged = if repeat { self.unchanged + 1 } else { 0 };
        if *mask != self.last {
            self.before_last = Some(std::mem::replace(&mut self.last, mask.clone()));
        }
        !repeat
    }

    pub fn stalled(&self) -> bool {
        self.unchanged >= STALL_STEPS
    }
}

const LINES: [[(isize, isize); 3]; 4] = [
    [(-1, 0), (0, 0), (1, 0)],
    [(0, -1), (0, 0), (0, 1)],
    [(-1, -1), (0, 0), (1, 1)],
    [(-1, 1), (0, 0), (1, -1)],
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionParams {
    /// Weight of the ground-truth term of the speed function.
    pub lambda: f64,
    /// Balloon velocity: `> 0` dilates, `< 0` erodes.
    pub c: f64,
    /// Curvature smoothing passes per step.
    pub mu: u32,
    pub max_steps: usize,
    pub snapshot_every: usize,
    /// Balloon acts where `g > balloon_threshold * max(g)`.
    pub balloon_threshold: f64,
    /// Blur applied to the binary GT boundary before it enters the speed.
    pub sigma_y: f64,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self::alignment()
    }
}

impl EvolutionParams {
    /// Defaults for aligning noisy ground truth.
    pub fn alignment() -> Self {
        Self {
            lambda: 1.0,
            c: 0.0,
            mu: 1,
            max_steps: 50,
            snapshot_every: 5,
            balloon_threshold: 0.3,
            sigma_y: 1.0,
        }
    }

    /// Defaults for growing a coarse mask onto predicted edges.
    pub fn coarse_to_fine() -> Self {
        Self {
            lambda: 0.0,
            c: 1.0,
            ..Self::alignment()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !self.c.is_finite() {
            return Err(Error::param("balloon velocity must be finite"));
        }
        if self.mu > 4 {
            return Err(Error::param(format!("mu must be <= 4, got {}", self.mu)));
        }
        if self.max_steps == 0 || self.snapshot_every == 0 {
            return Err(Error::param("max_steps and snapshot_every must be positive"));
        }
        if self.snapshot_every > self.max_steps {
            return Err(Error::param("snapshot_every must not exceed max_steps"));
        }
        if !(0.0..=1.0).contains(&self.balloon_threshold) {
            return Err(Error::param("balloon_threshold must lie in [0, 1]"));
        }
        if !(self.sigma_y >= 0.0) || !self.sigma_y.is_finite() {
            return Err(Error::param("sigma_y must be >= 0"));
        }
        Ok(())
    }
}

/// Edge-stopping speed `g = 1/√(1+f) + λ/√(1+y)`.
///
/// `gt_boundary` may be `None` when `λ = 0`. Infinite `λ` is rejected: the
/// "ground truth is fixed" regime is handled by not evolving at all.
pub fn compute_g(pred: &ScalarField, gt_boundary: Option<&ScalarField>, lambda: f64) -> Result<ScalarField> {
    if !(lambda >= 0.0) {
        return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
    }
    if !lambda.is_finite() {
        return Err(Error::param(
            "infinite lambda: keep the ground truth fixed instead of evolving",
        ));
    }
    if pred.channels() != 1 {
        return Err(Error::shape("1 channel", pred.channels()));
    }
    let mut g = pred.map(|f| 1.0 / (1.0 + f.max(0.0)).sqrt());
    match gt_boundary {
        Some(y) => {
            if !y.same_shape(pred) {
                return Err(Error::shape(pred.dims_str(), y.dims_str()));
            }
            for (gv, &yv) in g.values_mut().iter_mut().zip(y.values()) {
                *gv += lambda / (1.0 + yv.max(0.0)).sqrt();
            }
        }
        None if lambda > 0.0 => {
            return Err(Error::param("lambda > 0 needs a ground-truth boundary map"));
        }
        None => {}
    }
    Ok(g)
}

/// Binary boundary blurred with `sigma` and rescaled so its maximum is 1.
pub fn smoothed_boundary(boundary: &BinaryMask, sigma: f64) -> Result<ScalarField> {
    let s = gaussian_smooth(&ScalarField::from(boundary), sigma)?;
    let m = s.max();
    Ok(if m > 0.0 { s.map(|v| v / m) } else { s })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingState {
    pub u: BinaryMask,
    pub step: usize,
    /// Curvature passes applied so far; selects SI∘IS vs IS∘SI.
    pub smoothing_passes: usize,
}

impl EmbeddingState {
    pub fn new(u: BinaryMask) -> Self {
        Self {
            u,
            step: 0,
            smoothing_passes: 0,
        }
    }

    /// The region vanished or filled the whole frame.
    pub fn collapsed(&self) -> bool {
        !self.u.any() || self.u.count() == self.u.width() * self.u.height()
    }
}

/// `max_P min_P u` over the four 3-pixel line elements.
pub fn si(u: &BinaryMask) -> BinaryMask {
    LINES
        .iter()
        .map(|l| erode_offsets(u, l))
        .reduce(|a, b| a.or(&b))
        .expect("four lines")
}

/// `min_P max_P u` over the four 3-pixel line elements.
pub fn is(u: &BinaryMask) -> BinaryMask {
    LINES
        .iter()
        .map(|l| dilate_offsets(u, l))
        .reduce(|a, b| a.and(&b))
        .expect("four lines")
}

/// Speed field with its central-difference gradient and balloon support,
/// prepared once per evolution.
#[derive(Clone, Debug)]
pub struct Evolver {
    params: EvolutionParams,
    gx: Vec<f64>,
    gy: Vec<f64>,
    balloon: BinaryMask,
    width: usize,
    height: usize,
}

fn central_gradient(values: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; values.len()];
    let mut gy = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(width - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(height - 1);
            gx[y * width + x] = 0.5 * (values[y * width + xr] - values[y * width + xl]);
            gy[y * width + x] = 0.5 * (values[yd * width + x] - values[yu * width + x]);
        }
    }
    (gx, gy)
}

impl Evolver {
    pub fn new(g: &ScalarField, params: EvolutionParams) -> Result<Self> {
        params.validate()?;
        if g.channels() != 1 {
            return Err(Error::shape("1 channel", g.channels()));
        }
        let (w, h) = (g.width(), g.height());
        let (gx, gy) = central_gradient(g.values(), w, h);
        let cut = params.balloon_threshold * g.max();
        let balloon = BinaryMask::from_bits(w, h, g.values().iter().map(|&v| v > cut).collect())?;
        Ok(Self {
            params,
            gx,
            gy,
            balloon,
            width: w,
            height: h,
        })
    }

    pub fn params(&self) -> &EvolutionParams {
        &self.params
    }

    /// Applies one step in place; returns whether `u` changed.
    pub fn step(&self, state: &mut EmbeddingState) -> Result<bool> {
        let u0 = &state.u;
        if u0.width() != self.width || u0.height() != self.height {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", u0.width(), u0.height()),
            ));
        }
        let mut u = u0.clone();

        // balloon
        if self.params.c != 0.0 {
            let moved = if self.params.c > 0.0 {
                dilate(&u, StructuringElement::Cross3)
            } else {
                erode(&u, StructuringElement::Cross3)
            };
            u = BinaryMask::from_fn(self.width, self.height, |x, y| {
                if self.balloon.get(x, y) {
                    moved.get(x, y)
                } else {
                    u.get(x, y)
                }
            });
        }

        // attraction: sign of ∇g·∇u
        let values: Vec<f64> = u.bits().iter().map(|&b| b as u8 as f64).collect();
        let (ux, uy) = central_gradient(&values, self.width, self.height);
        let mut bits = u.bits().to_vec();
        for (i, bit) in bits.iter_mut().enumerate() {
            let dot = self.gx[i] * ux[i] + self.gy[i] * uy[i];
            if dot > 0.0 {
                *bit = true;
            } else if dot < 0.0 {
                *bit = false;
            }
        }
        u = BinaryMask::from_bits(self.width, self.height, bits)?;

        // curvature
        for _ in 0..self.params.mu {
            u = if state.smoothing_passes.is_multiple_of(2) {
                si(&is(&u))
            } else {
                is(&si(&u))
            };
            state.smoothing_passes += 1;
        }

        let changed = u != state.u;
        state.u = u;
        state.step += 1;
        Ok(changed)
    }
}

/// One evolution step with a freshly prepared speed field.
pub fn mgac_step(state: &EmbeddingState, g: &ScalarField, params: &EvolutionParams) -> Result<EmbeddingState> {
    let mut params = *params;
    params.snapshot_every = params.snapshot_every.min(params.max_steps).max(1);
    let evolver = Evolver::new(g, params)?;
    let mut next = state.clone();
    evolver.step(&mut next)?;
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Stalled,
    Collapsed,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub mask: BinaryMask,
    pub contours: Vec<Polygon>,
    pub score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub stop: StopReason,
    pub final_state: EmbeddingState,
}

#[derive(Serialize)]
struct IndexEntry<'a> {
    step: usize,
    score: Option<f64>,
    mask: &'a str,
    contours: &'a str,
}

impl Trajectory {
    pub fn final_mask(&self) -> &BinaryMask {
        &self.final_state.u
    }

    pub fn steps_run(&self) -> usize {
        self.final_state.step
    }

    /// Writes `step_NNNNN.pgm` and `step_NNNNN.json` (contours) per snapshot
    /// plus `index.json` listing `{step, score, mask, contours}`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for s in &self.snapshots {
            let mask = format!("step_{:05}.pgm", s.step);
            let contours = format!("step_{:05}.json", s.step);
            io::write_mask(dir.join(&mask), &s.mask)?;
            fs::write(dir.join(&contours), serde_json::to_string(&s.contours)?)?;
            names.push((mask, contours));
        }
        let index: Vec<IndexEntry> = self
            .snapshots
            .iter()
            .zip(&names)
            .map(|(s, (m, c))| IndexEntry {
                step: s.step,
                score: s.score,
                mask: m,
                contours: c,
            })
            .collect();
        fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
        Ok(())
    }
}

fn snapshot(state: &EmbeddingState) -> Snapshot {
    Snapshot {
        step: state.step,
        mask: state.u.clone(),
        contours: mask_to_contours(&state.u),
        score: None,
    }
}

/// Runs up to `max_steps` steps from `initial`, snapshotting every
/// `snapshot_every` steps plus the first and last state. Stops early after
/// [`STALL_STEPS`] unchanged steps (see [`StallTracker`]) or when the region
/// vanishes.
pub fn evolve(initial: &BinaryMask, g: &ScalarField, params: &EvolutionParams) -> Result<Trajectory> {
    if !initial.any() {
        return Err(Error::NoForeground);
    }
    let evolver = Evolver::new(g, *params)?;
    let mut state = EmbeddingState::new(initial.clone());
    let mut snapshots = vec![snapshot(&state)];
    let mut tracker = StallTracker::new(initial);
    let mut stop = StopReason::MaxSteps;
    while state.step < params.max_steps {
        evolver.step(&mut state)?;
        tracker.record(&state.u);
        let stalled = tracker.stalled();
        let vanished = !state.u.any();
        let last = stalled || vanished || state.step == params.max_steps;
        if state.step.is_multiple_of(params.snapshot_every) || last {
            snapshots.push(snapshot(&state));
        }
        if vanished {
            stop = StopReason::Collapsed;
            break;
        }
        if stalled {
            stop = StopReason::Stalled;
            break;
        }
    }
    Ok(Trajectory {
        snapshots,
        stop,
        final_state: state,
    })
}

#[derive(Clone, Debug)]
pub struct Alignment {
    pub region: BinaryMask,
    pub boundary: BinaryMask,
    pub chosen_t: usize,
    pub initial_score: f64,
    pub chosen_score: f64,
    pub trajectory: Trajectory,
}

/// Evolves a noisy GT region toward high-probability ridges of `pred` and
/// keeps the snapshot whose boundary has the lowest weighted BCE under
/// `pred` (ties go to the earliest snapshot).
pub fn active_align(
    gt_region: &BinaryMask,
    pred: &ScalarField,
    params: &EvolutionParams,
    weights: &LossWeights,
) -> Result<Alignment> {
    if !gt_region.any() {
        return Err(Error::NoForeground);
    }
    if pred.channels() != 1 || pred.width() != gt_region.width() || pred.height() != gt_region.height() {
        return Err(Error::shape(
            format!("{}x{}x1", gt_region.width(), gt_region.height()),
            pred.dims_str(),
        ));
    }
    let y = smoothed_boundary(&mask_to_boundary(gt_region), params.sigma_y)?;
    let g = compute_g(pred, Some(&y), params.lambda)?;
    let mut trajectory = evolve(gt_region, &g, params)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, snap) in trajectory.snapshots.iter_mut().enumerate() {
        let score = weighted_bce(pred, &[mask_to_boundary(&snap.mask)], weights)?.value;
        snap.score = Some(score);
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((i, score));
        }
    }
    let (idx, chosen_score) = best.expect("trajectory has its initial snapshot");
    let chosen = &trajectory.snapshots[idx];
    let initial_score = trajectory.snapshots[0].score.expect("scored");
    Ok(Alignment {
        region: chosen.mask.clone(),
        boundary: mask_to_boundary(&chosen.mask),
        chosen_t: chosen.step,
        initial_score,
        chosen_score,
        trajectory,
    })
}
