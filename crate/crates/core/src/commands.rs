//! Experiment commands behind the CLI verbs. Each writes only into its output
//! directory and records a manifest with the config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::{PolicyName, PredictorChoice, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{curve_to_csv, evaluate, fmt_f64, per_step_curve, psnr, MetricReport};
use crate::optim::{fit, init_scene, load_checkpoint, save_checkpoint, CheckpointMeta, TrainState};
use crate::planner::{run_active_loop, Policy, RoundCheckpoint, RunLog, Schedule, TestSet, UqScorer};
use crate::render::render_with;
use crate::rng::{derive_seed, Stream};
use crate::scene::{generate_synthetic_scene, sample_viewpoints, Camera, Scene, ViewpointSet, ViewpointSpec};
use crate::scoring::ScoreVariant;
use crate::uncertainty::{build_training_set, train_patch_regressor, PredictorKind, TrainedPredictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub files: Vec<String>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `config.toml` and `manifest.json` into `out`.
fn finish(out: &Path, command: &str, cfg: &RunConfig, mut files: Vec<String>) -> Result<()> {
    write(&out.join("config.toml"), cfg.to_toml())?;
    files.push("config.toml".into());
    files.sort();
    let m = Manifest {
        command: command.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        files,
    };
    write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&m).expect("manifest serializes"),
    )
}

/// Four views around the scene at the candidate radius, slightly above the equator.
pub fn canonical_views(cfg: &RunConfig) -> Vec<Camera> {
    let intr = cfg.candidate_spec().intrinsics();
    [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
        .iter()
        .map(|[x, y]| {
            let dir = Vector3::new(*x, *y, 0.35).normalize();
            Camera::look_at(intr, dir * cfg.candidates.radius, Vector3::zeros())
        })
        .collect()
}

/// Ground truth, candidates, test set and schedule for one seed.
pub struct Experiment {
    pub gt: Scene,
    pub cavity: Vec<usize>,
    pub candidates: ViewpointSet,
    pub test: TestSet,
    pub schedule: Schedule,
}

pub fn prepare(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let synth = generate_synthetic_scene(&cfg.scene_spec())?;
    let candidates = sample_viewpoints(&cfg.candidate_spec())?;
    let test_cams = if cfg.test_views.n == 0 {
        Vec::new()
    } else {
        sample_viewpoints(&cfg.test_view_spec())?.cameras
    };
    let test = TestSet::render(&synth.scene, test_cams, &cfg.optim.render)?;
    Ok(Experiment {
        gt: synth.scene,
        cavity: synth.cavity,
        candidates,
        test,
        schedule: cfg.schedule.build()?,
    })
}

/// Fits the ridge predictor on scenes generated from the training seeds.
pub fn train_predictor(cfg: &RunConfig) -> Result<TrainedPredictor> {
    let t = &cfg.predictor_training;
    if t.scene_seeds.is_empty() || t.holdout_views == 0 {
        return Err(Error::Config("predictor training needs scene seeds and holdout views".into()));
    }
    let ctx = cfg.uq_context();
    let mut samples = Vec::new();
    for &seed in &t.scene_seeds {
        let spec = crate::scene::SceneSpec {
            seed,
            ..cfg.scene.clone()
        };
        let gt = generate_synthetic_scene(&spec)?.scene;
        let holdout = sample_viewpoints(&ViewpointSpec {
            n: t.holdout_views,
            seed: derive_seed(seed, Stream::Dataset),
            ..cfg.candidate_spec()
        })?;
        let dataset = crate::uncertainty::DatasetConfig {
            bounds: cfg.scene.bounds,
            radius: cfg.candidates.radius,
            ..t.dataset.clone()
        };
        samples.extend(build_training_set(&gt, &holdout.cameras, seed, &dataset, &ctx)?);
    }
    train_patch_regressor(&samples, &ctx, cfg.uq.ridge_lambda)
}

pub fn resolve_predictor(cfg: &RunConfig) -> Result<PredictorKind> {
    Ok(match cfg.uq.predictor {
        PredictorChoice::Oracle => PredictorKind::Oracle,
        PredictorChoice::Heuristic => PredictorKind::Heuristic,
        PredictorChoice::Trained => {
            let model = match &cfg.uq.model_path {
                Some(p) => TrainedPredictor::load(p)?,
                None => train_predictor(cfg)?,
            };
            PredictorKind::Trained(Box::new(model))
        }
    })
}

pub fn build_policy(cfg: &RunConfig, name: PolicyName, predictor: &PredictorKind) -> Policy {
    match name.variant() {
        None if name == PolicyName::Random => Policy::Random { seed: cfg.seed },
        None => Policy::OracleSsim,
        Some(variant) => Policy::Uq(UqScorer {
            predictor: predictor.clone(),
            weights: cfg.weights,
            variant,
        }),
    }
}

pub fn cmd_scene_gen(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    let synth = generate_synthetic_scene(&cfg.scene_spec())?;
    let scene_path = out.join("scene.json");
    synth.scene.save(&scene_path)?;
    let mut files = vec!["scene.json".to_string()];
    for (k, cam) in canonical_views(cfg).iter().enumerate() {
        let (img, _) = render_with(&synth.scene, cam, &cfg.optim.render)?;
        let name = format!("preview_{k}.ppm");
        img.color.write_ppm(&out.join(&name))?;
        files.push(name);
    }
    write(
        &out.join("cavity.json"),
        serde_json::to_string(&synth.cavity).expect("indices serialize"),
    )?;
    files.push("cavity.json".into());
    finish(out, "scene-gen", cfg, files)?;
    Ok(scene_path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: u64,
    pub train_psnr_avg: f64,
    pub final_loss: f64,
    pub test: Option<MetricReport>,
}

/// Fits a model of the generated scene from `fit.n_views` sphere views.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitSummary> {
    let exp = prepare(cfg)?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    let opts = &cfg.optim.render;
    let views = sample_viewpoints(&ViewpointSpec {
        n: cfg.fit.n_views,
        ..cfg.candidate_spec()
    })?;
    let init = init_scene(
        cfg.scene.bounds,
        cfg.init.n_init,
        derive_seed(cfg.seed, Stream::Init),
        exp.gt.background_color,
    )?;
    let mut state = TrainState::new(init, derive_seed(cfg.seed, Stream::Optimizer));
    for cam in views.cameras {
        let (img, _) = render_with(&exp.gt, &cam, opts)?;
        state.add_view(cam, img.color)?;
    }
    let optim = cfg.optim_config();
    let report = fit(&mut state, &optim, optim.total_iters)?;
    let mut psnr_sum = 0.0;
    for v in &state.active_views {
        let (img, _) = render_with(&state.scene, &v.camera, opts)?;
        psnr_sum += psnr(&img.color, &v.image)?;
    }
    let test = if exp.test.cameras.is_empty() {
        None
    } else {
        Some(evaluate(&state.scene, &exp.test.cameras, &exp.test.images, opts)?)
    };
    let summary = FitSummary {
        iterations: state.iteration,
        train_psnr_avg: psnr_sum / state.active_views.len() as f64,
        final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
        test,
    };
    state.save_checkpoint(&out.join("model.json"), &cfg.hash())?;
    let mut losses = String::from("iteration,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(losses, "{i},{l}");
    }
    write(&out.join("losses.csv"), losses)?;
    write(
        &out.join("fit_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let files = ["model.json", "model.meta.json", "losses.csv", "fit_summary.json"]
        .map(String::from)
        .to_vec();
    finish(out, "fit", cfg, files)?;
    Ok(summary)
}

fn checkpoint_name(round: usize) -> String {
    format!("round_{round:02}.json")
}

/// Writes the standard artifacts of one active run into `out`.
pub fn write_run_artifacts(out: &Path, log: &RunLog, cfg: &RunConfig) -> Result<Vec<String>> {
    ensure_dir(&out.join("checkpoints"))?;
    log.save(&out.join("run_log.json"))?;
    write(&out.join("scores.csv"), log.scores_csv())?;
    write(&out.join("selected_views.txt"), log.selection_text())?;
    write(&out.join("curve.csv"), curve_to_csv(&log.curve))?;
    write(&out.join("metrics.csv"), log.final_metrics.to_csv())?;
    write(
        &out.join("metrics.json"),
        serde_json::to_string_pretty(&log.final_metrics).expect("metrics serialize"),
    )?;
    let mut files: Vec<String> = [
        "run_log.json",
        "scores.csv",
        "selected_views.txt",
        "curve.csv",
        "metrics.csv",
        "metrics.json",
    ]
    .map(String::from)
    .to_vec();
    for c in &log.checkpoints {
        let name = checkpoint_name(c.round);
        let meta = CheckpointMeta {
            iteration: c.iteration,
            seed: cfg.seed,
            config_hash: cfg.hash(),
        };
        save_checkpoint(&c.scene, &meta, &out.join("checkpoints").join(&name))?;
        files.push(format!("checkpoints/{name}"));
    }
    Ok(files)
}

pub fn cmd_active_run(cfg: &RunConfig) -> Result<RunLog> {
    let exp = prepare(cfg)?;
    let predictor = resolve_predictor(cfg)?;
    let policy = build_policy(cfg, cfg.policy, &predictor);
    let log = run_active_loop(
        &exp.gt,
        &exp.candidates,
        &exp.schedule,
        &policy,
        &cfg.optim_config(),
        &exp.test,
        &cfg.loop_setup(),
    )?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    exp.gt.save(&out.join("gt_scene.json"))?;
    let mut files = write_run_artifacts(out, &log, cfg)?;
    files.push("gt_scene.json".into());
    if let PredictorKind::Trained(model) = &predictor {
        model.save(&out.join("predictor.json"))?;
        files.push("predictor.json".into());
    }
    finish(out, "active-run", cfg, files)?;
    Ok(log)
}

pub const ABLATION_VARIANTS: [PolicyName; 4] = [
    PolicyName::Uq,
    PolicyName::NoDepthUq,
    PolicyName::NoDepthBlending,
    PolicyName::DepthSquared,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub psnr_avg: f64,
    pub psnr_worst5: f64,
    pub ssim_avg: f64,
    pub ssim_worst5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    pub initial_views: Vec<usize>,
    pub selected: Vec<usize>,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationResult {
    pub fn table_csv(&self) -> String {
        let mut out = String::from("variant,psnr_avg,psnr_worst5,ssim_avg,ssim_worst5\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.variant,
                fmt_f64(r.psnr_avg),
                fmt_f64(r.psnr_worst5),
                r.ssim_avg,
                r.ssim_worst5
            );
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("variant,seed,psnr_avg,psnr_worst5,ssim_avg,ssim_worst5\n");
        for r in &self.runs {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.variant,
                r.seed,
                fmt_f64(m.psnr_avg),
                fmt_f64(m.psnr_worst5),
                m.ssim_avg,
                m.ssim_worst5
            );
        }
        out
    }
}

fn variant_label(name: PolicyName) -> &'static str {
    name.variant().unwrap_or(ScoreVariant::Full).name()
}

/// Runs the four score variants over the shared seeds; rows are seed means.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationResult> {
    cfg.validate()?;
    if cfg.ablate.seeds.is_empty() {
        return Err(Error::Config("ablate.seeds is empty".into()));
    }
    let predictor = resolve_predictor(cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.ablate.seeds {
        let seed_cfg = RunConfig {
            seed,
            ..cfg.clone()
        };
        let exp = prepare(&seed_cfg)?;
        for name in ABLATION_VARIANTS {
            let policy = build_policy(&seed_cfg, name, &predictor);
            let log = run_active_loop(
                &exp.gt,
                &exp.candidates,
                &exp.schedule,
                &policy,
                &seed_cfg.optim_config(),
                &exp.test,
                &seed_cfg.loop_setup(),
            )?;
            log::info!("ablate seed {seed} {}: {:.3} dB", variant_label(name), log.final_metrics.psnr_avg);
            runs.push(AblationRun {
                variant: variant_label(name).into(),
                seed,
                initial_views: log.initial_views.clone(),
                selected: log.view_sequence(),
                metrics: log.final_metrics,
            });
        }
    }
    let rows = ABLATION_VARIANTS
        .iter()
        .map(|&name| {
            let label = variant_label(name);
            let mine: Vec<&MetricReport> = runs.iter().filter(|r| r.variant == label).map(|r| &r.metrics).collect();
            let mean = |f: fn(&MetricReport) -> f64| mine.iter().map(|m| f(m)).sum::<f64>() / mine.len() as f64;
            AblationRow {
                variant: label.into(),
                psnr_avg: mean(|m| m.psnr_avg),
                psnr_worst5: mean(|m| m.psnr_worst5),
                ssim_avg: mean(|m| m.ssim_avg),
                ssim_worst5: mean(|m| m.ssim_worst5),
            }
        })
        .collect();
    let result = AblationResult { rows, runs };
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    write(&out.join("ablation.csv"), result.table_csv())?;
    write(&out.join("ablation_runs.csv"), result.runs_csv())?;
    write(
        &out.join("ablation.json"),
        serde_json::to_string_pretty(&result).expect("ablation serializes"),
    )?;
    let files = ["ablation.csv", "ablation_runs.csv", "ablation.json"].map(String::from).to_vec();
    finish(out, "ablate", cfg, files)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub report: MetricReport,
    /// Largest deviation from the run's stored report and curve.
    pub max_abs_diff: f64,
}

pub const EVAL_TOLERANCE: f64 = 1e-9;

/// Re-evaluates a finished run from its checkpoints and checks the result
/// against the stored report and curve.
pub fn cmd_eval(run_dir: &Path, out_dir: &Path) -> Result<EvalResult> {
    let cfg = RunConfig::load(&run_dir.join("config.toml"))?;
    let gt = Scene::load(&run_dir.join("gt_scene.json"))?;
    let mut log = RunLog::load(&run_dir.join("run_log.json"))?;
    let stored_path = run_dir.join("metrics.json");
    let stored_text = fs::read_to_string(&stored_path).map_err(|e| Error::io(&stored_path, e))?;
    let stored: MetricReport = serde_json::from_str(&stored_text).map_err(|e| Error::format(&stored_path, e))?;
    if cfg.test_views.n == 0 {
        return Err(Error::Invalid("empty test set".into()));
    }
    let test = TestSet::render(&gt, sample_viewpoints(&cfg.test_view_spec())?.cameras, &cfg.optim.render)?;
    log.checkpoints = log
        .curve
        .iter()
        .map(|p| {
            let path = run_dir.join("checkpoints").join(checkpoint_name(p.round));
            let (scene, meta) = load_checkpoint(&path)?;
            if meta.iteration != p.iteration {
                return Err(Error::format(&path, "checkpoint iteration does not match the run log"));
            }
            Ok(RoundCheckpoint {
                round: p.round,
                iteration: p.iteration,
                n_views: p.n_views,
                scene,
            })
        })
        .collect::<Result<_>>()?;
    let curve = per_step_curve(&log, &test, &cfg.optim.render)?;
    let last = log.checkpoints.last().ok_or_else(|| Error::Invalid("run has no checkpoints".into()))?;
    let report = evaluate(&last.scene, &test.cameras, &test.images, &cfg.optim.render)?;
    let mut diff = report.max_abs_diff(&stored);
    for (a, b) in curve.iter().zip(&log.curve) {
        for (x, y) in [
            (a.psnr_avg, b.psnr_avg),
            (a.psnr_worst5, b.psnr_worst5),
            (a.ssim_avg, b.ssim_avg),
            (a.ssim_worst5, b.ssim_worst5),
        ] {
            if x != y {
                diff = diff.max((x - y).abs());
            }
        }
    }
    if !(diff <= EVAL_TOLERANCE) {
        return Err(Error::Invalid(format!(
            "re-evaluated metrics differ from the stored report by {diff:e}"
        )));
    }
    ensure_dir(out_dir)?;
    write(&out_dir.join("eval_metrics.csv"), report.to_csv())?;
    write(&out_dir.join("eval_curve.csv"), curve_to_csv(&curve))?;
    let result = EvalResult {
        report,
        max_abs_diff: diff,
    };
    write(
        &out_dir.join("eval.json"),
        serde_json::to_string_pretty(&result).expect("eval serializes"),
    )?;
    Ok(result)
}

/// Renders a scene file (or the generated ground truth) from the canonical
/// views: colour as PPM, depth and alpha as float32 dumps.
pub fn cmd_render(cfg: &RunConfig, scene_path: Option<&Path>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let scene = match scene_path {
        Some(p) => Scene::load(p)?,
        None => generate_synthetic_scene(&cfg.scene_spec())?.scene,
    };
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    let mut files = Vec::new();
    for (k, cam) in canonical_views(cfg).iter().enumerate() {
        let (img, depth) = render_with(&scene, cam, &cfg.optim.render)?;
        for (name, res) in [
            (format!("view_{k}.ppm"), img.color.write_ppm(&out.join(format!("view_{k}.ppm")))),
            (format!("depth_{k}.raw"), depth.depth.write_raw(&out.join(format!("depth_{k}.raw")))),
            (format!("alpha_{k}.raw"), img.accum_alpha.write_raw(&out.join(format!("alpha_{k}.raw")))),
        ] {
            res?;
            files.push(name);
        }
    }
    finish(out, "render", cfg, files.clone())?;
    Ok(files.into_iter().map(|f| out.join(f)).collect())
}

/// Trains the ridge predictor and writes `predictor.json`.
pub fn cmd_train_predictor(cfg: &RunConfig) -> Result<TrainedPredictor> {
    cfg.validate()?;
    let model = train_predictor(cfg)?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    model.save(&out.join("predictor.json"))?;
    finish(out, "train-predictor", cfg, vec!["predictor.json".into()])?;
    Ok(model)
}
