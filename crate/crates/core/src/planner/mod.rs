//! The active loop: fit, score unselected candidates, add the argmax view,
//! repeat on a fixed iteration schedule. Also path-level selection.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, CurvePoint, MetricReport};
use crate::image::RgbImage;
use crate::optim::{fit, init_scene, OptimConfig, TrainState};
use crate::render::{render_with, DepthMap, RenderOptions, RenderedImage};
use crate::rng::{derive_seed, indexed, stream_rng, Stream};
use crate::scene::{Camera, Scene, ViewpointSet};
use crate::scoring::{score_view, scores_csv_rows, ScoreVariant, ScoreWeights, ViewScore, SCORE_CSV_HEADER};
use crate::uncertainty::{oracle_uncertainty, GroundTruthView, PredictorKind, UqContext};

#[cfg(test)]
mod tests;

/// Iterations at which one view is added, following FisherRF's schedule.
pub const PAPER_ADD_ITERS: [u64; 16] = [
    400, 900, 1500, 2200, 3000, 3900, 4900, 6000, 7200, 8500, 9900, 11400, 13000, 14700, 16500, 18400,
];
pub const PAPER_TOTAL_ITERS: u64 = 30_000;
pub const PAPER_N_TOTAL: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub add_iters: Vec<u64>,
    pub n_initial: usize,
    pub n_total: usize,
    pub total_iters: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            add_iters: PAPER_ADD_ITERS.to_vec(),
            n_initial: PAPER_N_TOTAL - PAPER_ADD_ITERS.len(),
            n_total: PAPER_N_TOTAL,
            total_iters: PAPER_TOTAL_ITERS,
        }
    }
}

impl Schedule {
    /// The default schedule with every addition scaled by `total_iters / 30000`
    /// and rounded.
    pub fn rescaled(total_iters: u64) -> Result<Self> {
        let base = Self::default();
        let f = total_iters as f64 / PAPER_TOTAL_ITERS as f64;
        let s = Self {
            add_iters: base.add_iters.iter().map(|&a| (a as f64 * f).round() as u64).collect(),
            total_iters,
            ..base
        };
        s.validate()?;
        Ok(s)
    }

    /// Keeps the first `k` additions (n_total shrinks accordingly).
    pub fn truncated(&self, k: usize) -> Self {
        let add_iters: Vec<u64> = self.add_iters.iter().copied().take(k).collect();
        Self {
            n_total: self.n_initial + add_iters.len(),
            add_iters,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_initial == 0 {
            return Err(Error::Config("schedule needs at least one initial view".into()));
        }
        if self.n_initial + self.add_iters.len() != self.n_total {
            return Err(Error::Config("n_initial + additions must equal n_total".into()));
        }
        if self.add_iters.windows(2).any(|w| w[0] >= w[1]) || self.add_iters.first() == Some(&0) {
            return Err(Error::Config("add_iters must be positive and strictly increasing".into()));
        }
        if self.add_iters.last().is_some_and(|&a| a > self.total_iters) {
            return Err(Error::Config("additions must not exceed total_iters".into()));
        }
        Ok(())
    }
}

/// A UQ scoring rule: predictor, weights and which score terms are active.
#[derive(Debug, Clone, PartialEq)]
pub struct UqScorer {
    pub predictor: PredictorKind,
    pub weights: ScoreWeights,
    pub variant: ScoreVariant,
}

impl UqScorer {
    pub fn score(
        &self,
        rendered: &RenderedImage,
        depth: &DepthMap,
        gt: Option<GroundTruthView<'_>>,
        ctx: &UqContext,
        view_id: usize,
    ) -> Result<ViewScore> {
        let (r, d) = self.predictor.predict(rendered, depth, gt, ctx)?;
        score_view(self.variant, depth, &r, &d, &self.weights, ctx.depth_scale, view_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Random { seed: u64 },
    /// Mean oracle render uncertainty against ground truth.
    OracleSsim,
    Uq(UqScorer),
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Random { .. } => "random".into(),
            Policy::OracleSsim => "oracle_ssim".into(),
            Policy::Uq(s) if s.variant == ScoreVariant::Full => format!("uq_{}", s.predictor.name()),
            Policy::Uq(s) => format!("uq_{}_{}", s.predictor.name(), s.variant.name()),
        }
    }

    fn needs_ground_truth(&self) -> bool {
        match self {
            Policy::Random { .. } => false,
            Policy::OracleSsim => true,
            Policy::Uq(s) => s.predictor.needs_ground_truth(),
        }
    }
}

/// Ground-truth colour and depth renders, one per candidate.
pub struct GroundTruthRenders {
    pub views: Vec<(RgbImage, DepthMap)>,
}

impl GroundTruthRenders {
    pub fn render(gt: &Scene, cameras: &[Camera], opts: &RenderOptions) -> Result<Self> {
        let views = cameras
            .par_iter()
            .map(|c| render_with(gt, c, opts).map(|(img, d)| (img.color, d)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { views })
    }

    fn view(&self, i: usize) -> GroundTruthView<'_> {
        let (color, depth) = &self.views[i];
        GroundTruthView { color, depth }
    }
}

/// Inputs shared by every selection round.
pub struct SelectionContext<'a> {
    pub uq: &'a UqContext,
    pub render: &'a RenderOptions,
    pub gt: Option<&'a GroundTruthRenders>,
    pub round: usize,
}

/// Renders each unselected candidate from `scene`, scores it under `policy`
/// and returns the argmax (ties to the lowest index) with all scores in
/// candidate order. The random policy returns no scores.
pub fn select_next_view(
    scene: &Scene,
    candidates: &ViewpointSet,
    policy: &Policy,
    ctx: &SelectionContext<'_>,
) -> Result<(usize, Vec<ViewScore>)> {
    let open: Vec<usize> = candidates.unselected().collect();
    if open.is_empty() {
        return Err(Error::Invalid("all candidates are already selected".into()));
    }
    if let Policy::Random { seed } = policy {
        let k = indexed(derive_seed(*seed, Stream::Policy), ctx.round as u64) % open.len() as u64;
        return Ok((open[k as usize], Vec::new()));
    }
    let gt = match (policy.needs_ground_truth(), ctx.gt) {
        (true, None) => return Err(Error::Invalid(format!("policy {} needs ground-truth renders", policy.name()))),
        (_, gt) => gt,
    };
    let scores = open
        .par_iter()
        .map(|&i| {
            let (img, depth) = render_with(scene, &candidates.cameras[i], ctx.render)?;
            let gt_view = gt.map(|g| g.view(i));
            match policy {
                Policy::OracleSsim => {
                    let gv = gt_view.expect("checked above");
                    let r = oracle_uncertainty(&img.color, gv.color)?;
                    let sum_r: f64 = r.values.data.iter().sum();
                    Ok(ViewScore {
                        view_id: i,
                        l_blend: 0.0,
                        l_blend_star: 0.0,
                        sum_r,
                        sum_d: 0.0,
                        total: r.mean(),
                    })
                }
                Policy::Uq(s) => s.score(&img, &depth, gt_view, ctx.uq, i),
                Policy::Random { .. } => unreachable!(),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((argmax_by_total(&scores).map(|k| scores[k].view_id).expect("non-empty"), scores))
}

/// First index of the largest total; NaN totals never win.
fn argmax_by_total(scores: &[ViewScore]) -> Option<usize> {
    argmax(&scores.iter().map(|s| s.total).collect::<Vec<_>>())
}

fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.or(if values.is_empty() { None } else { Some(0) })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialViews {
    /// Candidates 0..n_initial.
    #[default]
    LowestIndex,
    /// n_initial distinct candidates drawn from the policy stream.
    SeededRandom,
}

/// Everything the loop needs besides the scene, candidates, schedule and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopSetup {
    pub seed: u64,
    /// Number of Gaussians in the initial model.
    pub n_init: usize,
    /// Half-extents of the initialization box.
    pub init_bounds: [f64; 3],
    pub initial_views: InitialViews,
    #[serde(skip)]
    pub uq: UqContext,
}

impl Default for LoopSetup {
    fn default() -> Self {
        Self {
            seed: 0,
            n_init: 300,
            init_bounds: [1.0; 3],
            initial_views: InitialViews::LowestIndex,
            uq: UqContext::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub iteration: u64,
    pub selected_view: usize,
    pub scores: Vec<ViewScore>,
}

/// Model snapshot at a curve point.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundCheckpoint {
    pub round: usize,
    pub iteration: u64,
    pub n_views: usize,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub policy: String,
    pub seed: u64,
    pub initial_views: Vec<usize>,
    pub records: Vec<RoundRecord>,
    pub curve: Vec<CurvePoint>,
    pub final_metrics: MetricReport,
    #[serde(skip)]
    pub checkpoints: Vec<RoundCheckpoint>,
}

impl RunLog {
    /// Initial views followed by each round's selection.
    pub fn view_sequence(&self) -> Vec<usize> {
        self.initial_views
            .iter()
            .copied()
            .chain(self.records.iter().map(|r| r.selected_view))
            .collect()
    }

    /// One index per line.
    pub fn selection_text(&self) -> String {
        let mut out = String::new();
        for v in self.view_sequence() {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn scores_csv(&self) -> String {
        let mut out = format!("{SCORE_CSV_HEADER}\n");
        for r in &self.records {
            scores_csv_rows(&mut out, r.round, &r.scores, r.selected_view);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run log serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

/// Test cameras and their ground-truth images.
pub struct TestSet {
    pub cameras: Vec<Camera>,
    pub images: Vec<RgbImage>,
}

impl TestSet {
    pub fn render(gt: &Scene, cameras: Vec<Camera>, opts: &RenderOptions) -> Result<Self> {
        let images = cameras
            .par_iter()
            .map(|c| render_with(gt, c, opts).map(|(img, _)| img.color))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cameras, images })
    }
}

fn initial_views(n_candidates: usize, schedule: &Schedule, setup: &LoopSetup) -> Vec<usize> {
    match setup.initial_views {
        InitialViews::LowestIndex => (0..schedule.n_initial).collect(),
        InitialViews::SeededRandom => {
            let mut rng = stream_rng(setup.seed, Stream::Policy);
            let mut v = sample(&mut rng, n_candidates, schedule.n_initial).into_vec();
            v.sort_unstable();
            v
        }
    }
}

/// Runs the full active-reconstruction loop against a ground-truth scene.
pub fn run_active_loop(
    gt_scene: &Scene,
    candidates: &ViewpointSet,
    schedule: &Schedule,
    policy: &Policy,
    optim: &OptimConfig,
    test: &TestSet,
    setup: &LoopSetup,
) -> Result<RunLog> {
    schedule.validate()?;
    optim.validate()?;
    if candidates.len() < schedule.n_total {
        return Err(Error::Config(format!(
            "{} candidates cannot supply {} views",
            candidates.len(),
            schedule.n_total
        )));
    }
    if test.cameras.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    for (ti, t) in test.cameras.iter().enumerate() {
        if let Some(ci) = candidates.cameras.iter().position(|c| c.pose_distance(t) < 1e-9) {
            return Err(Error::Invalid(format!("test view {ti} coincides with candidate {ci}")));
        }
    }
    let opts = &optim.render;
    let mut cands = candidates.clone();
    cands.selected_mask.iter_mut().for_each(|m| *m = false);
    // Ground truth for every candidate: supplies the images of selected views
    // and the oracle's reference.
    let gt = GroundTruthRenders::render(gt_scene, &cands.cameras, opts)?;

    let init = init_scene(
        setup.init_bounds,
        setup.n_init,
        derive_seed(setup.seed, Stream::Init),
        gt_scene.background_color,
    )?;
    let mut state = TrainState::new(init, derive_seed(setup.seed, Stream::Optimizer));
    let initial = initial_views(cands.len(), schedule, setup);
    for &v in &initial {
        cands.select(v)?;
        state.add_view(cands.cameras[v].clone(), gt.views[v].0.clone())?;
    }

    let mut log = RunLog {
        policy: policy.name(),
        seed: setup.seed,
        initial_views: initial,
        records: Vec::new(),
        curve: Vec::new(),
        final_metrics: MetricReport::default(),
        checkpoints: Vec::new(),
    };
    let snapshot = |log: &mut RunLog, state: &TrainState, round: usize| -> Result<MetricReport> {
        let m = evaluate(&state.scene, &test.cameras, &test.images, opts)?;
        log.curve.push(CurvePoint::new(round, state.iteration, state.active_views.len(), &m));
        log.checkpoints.push(RoundCheckpoint {
            round,
            iteration: state.iteration,
            n_views: state.active_views.len(),
            scene: state.scene.clone(),
        });
        Ok(m)
    };

    for (round, &at) in schedule.add_iters.iter().enumerate() {
        let mut step = || -> Result<()> {
            fit(&mut state, optim, at)?;
            snapshot(&mut log, &state, round)?;
            let ctx = SelectionContext {
                uq: &setup.uq,
                render: opts,
                gt: Some(&gt),
                round,
            };
            let (chosen, scores) = select_next_view(&state.scene, &cands, policy, &ctx)?;
            cands.select(chosen)?;
            state.add_view(cands.cameras[chosen].clone(), gt.views[chosen].0.clone())?;
            log::info!("round {round} iter {at}: selected view {chosen}");
            log.records.push(RoundRecord {
                round,
                iteration: at,
                selected_view: chosen,
                scores,
            });
            Ok(())
        };
        step().map_err(|e| e.in_round(round))?;
    }
    let rounds = schedule.add_iters.len();
    fit(&mut state, optim, schedule.total_iters).map_err(|e| e.in_round(rounds))?;
    log.final_metrics = snapshot(&mut log, &state, rounds)?;
    debug_assert_eq!(log.view_sequence().iter().collect::<BTreeSet<_>>().len(), schedule.n_total);
    Ok(log)
}

/// Per-frame scores along a path.
pub fn path_frame_scores(
    path: &[Camera],
    scene: &Scene,
    scorer: &UqScorer,
    ctx: &UqContext,
    opts: &RenderOptions,
    gt_scene: Option<&Scene>,
) -> Result<Vec<ViewScore>> {
    if path.is_empty() {
        return Err(Error::Invalid("path has no poses".into()));
    }
    if scorer.predictor.needs_ground_truth() && gt_scene.is_none() {
        return Err(Error::Invalid("oracle path scoring needs the ground-truth scene".into()));
    }
    path.par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let (img, depth) = render_with(scene, cam, opts)?;
            let gt = gt_scene.map(|g| render_with(g, cam, opts)).transpose()?;
            let gv = gt.as_ref().map(|(c, d)| GroundTruthView {
                color: &c.color,
                depth: d,
            });
            scorer.score(&img, &depth, gv, ctx, i)
        })
        .collect()
}

/// Mean of the per-frame totals.
pub fn score_path(
    path: &[Camera],
    scene: &Scene,
    scorer: &UqScorer,
    ctx: &UqContext,
    opts: &RenderOptions,
    gt_scene: Option<&Scene>,
) -> Result<f64> {
    let frames = path_frame_scores(path, scene, scorer, ctx, opts, gt_scene)?;
    Ok(frames.iter().map(|s| s.total).sum::<f64>() / frames.len() as f64)
}

/// Index of the highest-scoring path; ties go to the lowest index.
pub fn select_path(
    paths: &[Vec<Camera>],
    scene: &Scene,
    scorer: &UqScorer,
    ctx: &UqContext,
    opts: &RenderOptions,
    gt_scene: Option<&Scene>,
) -> Result<usize> {
    if paths.is_empty() {
        return Err(Error::Invalid("no candidate paths".into()));
    }
    let scores = paths
        .iter()
        .map(|p| score_path(p, scene, scorer, ctx, opts, gt_scene))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(&scores).expect("non-empty"))
}
