use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use contourforge::coarse::simulate_coarse;
use contourforge::levelset::{active_align, compute_g, evolve, smoothed_boundary, EvolutionParams};
use contourforge::metrics::{evaluate_dataset, iou, MatchParams};
use contourforge::normals::estimate_normals;
use contourforge::raster::io::{decode_netpbm, read_field, read_mask, read_polygon, write_field, write_mask};
use contourforge::raster::{mask_to_boundary, polygon_to_mask, BinaryMask, ScalarField};
use contourforge::synthetic::circle_task;
use contourforge::train::{
    logits_from_probabilities, sharpness_profile, sharpness_ratio, train, TrainConfig, TrainReport,
};
use contourforge::LossWeights;
use contourforge_service::{AppState, ServiceConfig};

use crate::{AlignArgs, Cli, Command, EvalArgs, NormalsArgs, RefineArgs, ServeArgs, SimulateArgs, TrainToyArgs};

/// Runs the selected subcommand and returns its one-line JSON summary.
pub fn run(cli: &Cli) -> Result<String> {
    let summary = match &cli.command {
        Command::Refine(a) => refine(a)?,
        Command::Align(a) => align(a)?,
        Command::Eval(a) => eval(a)?,
        Command::SimulateCoarse(a) => simulate(a)?,
        Command::TrainToy(a) => train_toy(a, cli.seed)?,
        Command::Normals(a) => normals(a)?,
        Command::Serve(a) => serve(a)?,
    };
    Ok(serde_json::to_string(&summary)?)
}

fn read_prob(path: &Path) -> Result<ScalarField> {
    let field = read_field(path).with_context(|| format!("reading {}", path.display()))?;
    if field.channels() != 1 {
        bail!(
            "{}: expected a single-channel map, got {}",
            path.display(),
            field.dims_str()
        );
    }
    Ok(field)
}

fn read_mask_at(path: &Path) -> Result<BinaryMask> {
    read_mask(path).with_context(|| format!("reading {}", path.display()))
}

fn write_mask_at(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_mask(path, mask).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn check_dims(prob: &ScalarField, mask: &BinaryMask, what: &str) -> Result<()> {
    if prob.width() != mask.width() || prob.height() != mask.height() {
        bail!(
            "{what} is {}x{} but the probability map is {}x{}",
            mask.width(),
            mask.height(),
            prob.width(),
            prob.height()
        );
    }
    Ok(())
}

fn refine(a: &RefineArgs) -> Result<Value> {
    let prob = read_prob(&a.prob)?;
    let init = match (&a.init, &a.init_poly) {
        (Some(p), _) => read_mask_at(p)?,
        (None, Some(p)) => {
            let poly = read_polygon(p).with_context(|| format!("reading {}", p.display()))?;
            polygon_to_mask(&poly, prob.width(), prob.height())?
        }
        (None, None) => unreachable!("clap enforces one initialisation"),
    };
    check_dims(&prob, &init, "initial mask")?;
    if a.steps == 0 {
        write_mask_at(&a.out, &init)?;
        return Ok(json!({ "steps_run": 0, "iou_vs_init": 1.0, "stop": "max_steps", "area": init.count() }));
    }
    let params = EvolutionParams {
        lambda: a.lambda,
        c: a.c,
        mu: a.mu,
        max_steps: a.steps,
        snapshot_every: a.steps.min(5),
        balloon_threshold: a.threshold,
        ..EvolutionParams::coarse_to_fine()
    };
    params.validate()?;
    let y = if a.lambda > 0.0 {
        Some(smoothed_boundary(&mask_to_boundary(&init), params.sigma_y)?)
    } else {
        None
    };
    let g = compute_g(&prob, y.as_ref(), a.lambda)?;
    let trajectory = evolve(&init, &g, &params)?;
    let out = trajectory.final_mask();
    write_mask_at(&a.out, out)?;
    if let Some(dir) = &a.trajectory {
        trajectory
            .export(dir)
            .with_context(|| format!("writing {}", dir.display()))?;
    }
    Ok(json!({
        "steps_run": trajectory.steps_run(),
        "iou_vs_init": iou(out, &init),
        "stop": trajectory.stop,
        "area": out.count(),
    }))
}

fn align(a: &AlignArgs) -> Result<Value> {
    let prob = read_prob(&a.prob)?;
    let gt = read_mask_at(&a.gt)?;
    check_dims(&prob, &gt, "GT region")?;
    let params = EvolutionParams {
        lambda: a.lambda,
        c: a.c,
        mu: a.mu,
        max_steps: a.max_steps,
        snapshot_every: a.snapshot_every,
        ..EvolutionParams::alignment()
    };
    params.validate()?;
    let aligned = active_align(&gt, &prob, &params, &LossWeights::default())?;
    write_mask_at(&a.out, &aligned.region)?;
    if let Some(p) = &a.out_boundary {
        write_mask_at(p, &aligned.boundary)?;
    }
    Ok(json!({
        "chosen_t": aligned.chosen_t,
        "initial_score": aligned.initial_score,
        "chosen_score": aligned.chosen_score,
        "steps_run": aligned.trajectory.steps_run(),
        "stop": aligned.trajectory.stop,
    }))
}

/// Splits `<image>_<class>.<ext>` into its image name and class index.
fn parse_eval_name(path: &Path, ext: &str) -> Option<(String, usize)> {
    if path.extension()?.to_str()? != ext {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let (image, class) = stem.rsplit_once('_')?;
    if image.is_empty() {
        return None;
    }
    Some((image.to_string(), class.parse().ok()?))
}

fn list_eval_files(dir: &Path, exts: &[&str]) -> Result<BTreeMap<(String, usize), PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        for ext in exts {
            if let Some(key) = parse_eval_name(&path, ext) {
                if let Some(prev) = files.insert(key, path.clone()) {
                    bail!(
                        "{} and {} name the same image and class",
                        prev.display(),
                        path.display()
                    );
                }
            }
        }
    }
    Ok(files)
}

fn read_gt_boundary(path: &Path) -> Result<BinaryMask> {
    if path.extension().is_some_and(|e| e == "fpm") {
        let f = read_prob(path)?;
        Ok(f.threshold(0, 0.5))
    } else {
        read_mask_at(path)
    }
}

fn eval(a: &EvalArgs) -> Result<Value> {
    if a.classes == 0 {
        bail!("--classes must be at least 1");
    }
    let params = MatchParams {
        tolerance_fraction: a.tol,
        thin_predictions: a.thin,
        thresholds: a.thresholds,
    };
    params.validate()?;
    let preds = list_eval_files(&a.pred_dir, &["fpm"])?;
    if preds.is_empty() {
        bail!("no `<image>_<class>.fpm` predictions in {}", a.pred_dir.display());
    }
    let gts = list_eval_files(&a.gt_dir, &["pgm", "fpm"])?;
    let images: BTreeSet<String> = preds.keys().chain(gts.keys()).map(|(i, _)| i.clone()).collect();
    let mut missing = Vec::new();
    for image in &images {
        for k in 0..a.classes {
            let key = (image.clone(), k);
            if !preds.contains_key(&key) {
                missing.push(format!("{}/{image}_{k}.fpm", a.pred_dir.display()));
            }
            if !gts.contains_key(&key) {
                missing.push(format!("{}/{image}_{k}.pgm", a.gt_dir.display()));
            }
        }
    }
    if !missing.is_empty() {
        bail!("missing prediction/GT pairs:\n  {}", missing.join("\n  "));
    }
    let images: Vec<String> = images.into_iter().collect();
    let loaded: Vec<(ScalarField, Vec<BinaryMask>)> = images
        .par_iter()
        .map(|image| -> Result<_> {
            let mut planes = Vec::with_capacity(a.classes);
            let mut gt = Vec::with_capacity(a.classes);
            for k in 0..a.classes {
                let key = (image.clone(), k);
                let p = read_prob(&preds[&key])?;
                let g = read_gt_boundary(&gts[&key])?;
                check_dims(&p, &g, &format!("GT {image}_{k}"))?;
                planes.push(p);
                gt.push(g);
            }
            Ok((ScalarField::stack(&planes)?, gt))
        })
        .collect::<Result<_>>()?;
    let (pred_fields, gt_masks): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    let result = evaluate_dataset(&pred_fields, &gt_masks, &params)?;
    write_json(&a.out, &result)?;
    if let Some(csv) = &a.csv {
        fs::write(csv, result.pr_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(json!({
        "images": images.len(),
        "classes": a.classes,
        "mean_mf_ods": result.mean_mf_ods,
        "mean_ap": result.mean_ap,
    }))
}

fn simulate_one(mask: &Path, target: f64, out: &Path, polygon: Option<&Path>) -> Result<contourforge::CoarseReport> {
    let fine = read_mask_at(mask)?;
    let result = simulate_coarse(&fine, target).with_context(|| format!("simulating {}", mask.display()))?;
    write_mask_at(out, &result.coarse_mask)?;
    if let Some(p) = polygon {
        contourforge::raster::io::write_polygon(p, &result.polygon)?;
    }
    Ok(result.report(&fine))
}

#[derive(Serialize)]
struct BatchEntry {
    file: String,
    #[serde(flatten)]
    report: contourforge::CoarseReport,
}

fn simulate(a: &SimulateArgs) -> Result<Value> {
    if !a.mask.is_dir() {
        let report = simulate_one(&a.mask, a.target_err, &a.out, a.polygon.as_deref())?;
        if let Some(r) = &a.report {
            write_json(r, &report)?;
        }
        return Ok(serde_json::to_value(report)?);
    }
    if a.polygon.is_some() {
        bail!("--polygon is only supported for a single mask");
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&a.mask)
        .with_context(|| format!("listing {}", a.mask.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .pgm masks in {}", a.mask.display());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let entries: Vec<BatchEntry> = files
        .par_iter()
        .map(|f| {
            let name = f.file_name().expect("listed file").to_string_lossy().into_owned();
            let report = simulate_one(f, a.target_err, &a.out.join(&name), None)?;
            Ok(BatchEntry { file: name, report })
        })
        .collect::<Result<_>>()?;
    let total_clicks: usize = entries.iter().map(|e| e.report.clicks).sum();
    let n = entries.len() as f64;
    let summary = json!({
        "masks": entries.len(),
        "total_clicks": total_clicks,
        "mean_clicks": total_clicks as f64 / n,
        "mean_achieved_error_px": entries.iter().map(|e| e.report.achieved_error_px).sum::<f64>() / n,
        "mean_iou_vs_fine": entries.iter().map(|e| e.report.iou_vs_fine).sum::<f64>() / n,
    });
    if let Some(r) = &a.report {
        write_json(r, &json!({ "summary": summary, "masks": entries }))?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ToyTask {
    size: usize,
    true_radius: f64,
    noisy_radius: f64,
    blur_sigma: f64,
    /// Clamp applied to the prior probabilities before taking logits.
    prior_eps: f64,
    /// Half-width of the uniform jitter added to the initial logits.
    init_noise: f64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            size: 64,
            true_radius: 10.0,
            noisy_radius: 8.0,
            blur_sigma: 2.0,
            prior_eps: 0.02,
            init_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ToyConfig {
    task: ToyTask,
    train: TrainConfig,
}

#[derive(Serialize)]
struct ToyReport<'a> {
    #[serde(flatten)]
    report: &'a TrainReport,
    iterations: usize,
    loss_finite: bool,
    sharpness_profile: Vec<f64>,
    sharpness_ratio: f64,
}

fn train_toy(a: &TrainToyArgs, seed: Option<u64>) -> Result<Value> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut config: ToyConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    let t = &config.task;
    if t.size < 8 || !(t.true_radius > 0.0) || !(t.noisy_radius > 0.0) || !(t.blur_sigma >= 0.0) {
        bail!("task needs size >= 8, positive radii and a non-negative blur");
    }
    if !(t.prior_eps > 0.0 && t.prior_eps < 0.5) || !(t.init_noise >= 0.0) {
        bail!("task needs prior_eps in (0, 0.5) and init_noise >= 0");
    }
    let task = circle_task(t.size, t.true_radius, t.noisy_radius, t.blur_sigma);
    let mut logits = logits_from_probabilities(&task.pred, t.prior_eps);
    if t.init_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        for z in logits.values_mut() {
            *z += rng.random_range(-t.init_noise..=t.init_noise);
        }
    }
    let report = train(&logits, &task.noisy_region, &config.train, Some(&task.true_region))?;
    let truth = mask_to_boundary(&task.true_region);
    let normals = estimate_normals(&ScalarField::from(&truth), contourforge::normals::DEFAULT_NORMAL_SIGMA)?;
    let profile = sharpness_profile(&report.final_logits.sigmoid(), &truth, &normals);
    let ratio = sharpness_ratio(&profile);
    let loss_finite = report.losses.iter().all(|l| l.total.is_finite());

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_field(a.out.join("final_logits.fpm"), &report.final_logits)?;
    write_mask_at(&a.out.join("final_region.pgm"), &report.final_region)?;
    write_json(
        &a.out.join("report.json"),
        &ToyReport {
            report: &report,
            iterations: report.losses.len(),
            loss_finite,
            sharpness_profile: profile,
            sharpness_ratio: ratio,
        },
    )?;
    Ok(json!({
        "seed": report.seed,
        "iterations": report.losses.len(),
        "final_loss": report.losses.last().map(|l| l.total),
        "loss_finite": loss_finite,
        "alignments": report.alignments.len(),
        "initial_error": report.initial_error,
        "final_error": report.final_error,
        "sharpness_ratio": ratio,
    }))
}

fn normals(a: &NormalsArgs) -> Result<Value> {
    let bytes = fs::read(&a.boundary).with_context(|| format!("reading {}", a.boundary.display()))?;
    let field = if bytes.starts_with(b"FPM1") {
        contourforge::raster::io::decode_fpm(&bytes)?
    } else {
        decode_netpbm(&bytes)?.to_gray_field()
    };
    if field.channels() != 1 {
        bail!(
            "{}: expected a single-channel map, got {}",
            a.boundary.display(),
            field.dims_str()
        );
    }
    let normals = estimate_normals(&field, a.sigma)?;
    write_field(&a.out, &normals.to_field()).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(json!({
        "width": normals.width(),
        "height": normals.height(),
        "valid_pixels": normals.valid_count(),
    }))
}

fn serve(a: &ServeArgs) -> Result<Value> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("invalid listen address {}:{}", a.host, a.port))?;
    if a.max_sessions == 0 {
        bail!("--max-sessions must be at least 1");
    }
    let state = AppState::new(ServiceConfig {
        max_sessions: a.max_sessions,
        cors_origin: a.cors_origin.clone(),
        ..ServiceConfig::default()
    });
    let maps = match &a.data {
        Some(dir) => state
            .load_dir(dir)
            .with_context(|| format!("loading {}", dir.display()))?,
        None => Vec::new(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(addr))
        .with_context(|| format!("binding {addr}"))?;
    let bound = listener.local_addr()?;
    let maps: Vec<Value> = maps
        .into_iter()
        .map(|(file, id)| json!({ "file": file, "map_id": id }))
        .collect();
    println!("{}", json!({ "listening": bound.to_string(), "maps": maps }));
    runtime.block_on(contourforge_service::serve_listener(listener, state))?;
    Ok(json!({ "stopped": true }))
}
