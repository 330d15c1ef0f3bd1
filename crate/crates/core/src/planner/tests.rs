use super::*;
use crate::eval::per_step_curve;
use crate::scene::{generate_synthetic_scene, sample_viewpoints, SceneSpec, ViewpointSpec};
use crate::scoring::total_score;
use crate::uncertainty::oracle_depth_uncertainty;

struct Fixture {
    gt: Scene,
    candidates: ViewpointSet,
    test: TestSet,
    diameter: f64,
}

fn fixture(seed: u64, n_candidates: usize, res: usize) -> Fixture {
    let spec = SceneSpec {
        seed,
        n_gaussians: 60,
        ..Default::default()
    };
    let gt = generate_synthetic_scene(&spec).unwrap().scene;
    let vp = ViewpointSpec {
        n: n_candidates,
        seed,
        width: res,
        height: res,
        ..Default::default()
    };
    let candidates = sample_viewpoints(&vp).unwrap();
    let test_cams = sample_viewpoints(&ViewpointSpec {
        n: 6,
        seed: seed + 1000,
        radius: 3.2,
        ..vp
    })
    .unwrap()
    .cameras;
    let test = TestSet::render(&gt, test_cams, &RenderOptions::default()).unwrap();
    Fixture {
        gt,
        candidates,
        test,
        diameter: spec.diameter(),
    }
}

fn small_schedule() -> Schedule {
    Schedule {
        add_iters: vec![15, 30],
        n_initial: 2,
        n_total: 4,
        total_iters: 45,
    }
}

fn small_setup(seed: u64, diameter: f64) -> LoopSetup {
    LoopSetup {
        seed,
        n_init: 40,
        uq: UqContext {
            depth_scale: diameter,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn heuristic(weights: ScoreWeights) -> Policy {
    Policy::Uq(UqScorer {
        predictor: PredictorKind::Heuristic,
        weights,
        variant: ScoreVariant::Full,
    })
}

#[test]
fn default_schedule_is_golden() {
    let s = Schedule::default();
    assert_eq!(
        s.add_iters,
        vec![400, 900, 1500, 2200, 3000, 3900, 4900, 6000, 7200, 8500, 9900, 11400, 13000, 14700, 16500, 18400]
    );
    assert_eq!((s.n_initial, s.n_total, s.total_iters), (4, 20, 30000));
    s.validate().unwrap();
}

#[test]
fn rescaled_schedule_keeps_spacing() {
    let s = Schedule::rescaled(3000).unwrap();
    assert_eq!(s.add_iters[0], 40);
    assert_eq!(s.add_iters[15], 1840);
    assert_eq!(s.total_iters, 3000);
    assert_eq!(Schedule::rescaled(30000).unwrap(), Schedule::default());
    assert!(Schedule::rescaled(10).is_err());
}

#[test]
fn schedule_validation() {
    let mut s = small_schedule();
    s.add_iters = vec![30, 15];
    assert!(s.validate().is_err());
    let mut s = small_schedule();
    s.n_total = 5;
    assert!(s.validate().is_err());
    assert_eq!(small_schedule().truncated(0).n_total, 2);
}

#[test]
fn argmax_ties_go_to_lowest_index() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), Some(1));
    assert_eq!(argmax(&[f64::NAN, 0.5]), Some(1));
    assert_eq!(argmax(&[]), None);
    let s = |id, total| ViewScore {
        view_id: id,
        l_blend: 0.0,
        l_blend_star: 0.0,
        sum_r: 0.0,
        sum_d: 0.0,
        total,
    };
    assert_eq!(argmax_by_total(&[s(0, 1.0), s(1, 2.0)]), Some(1));
}

#[test]
fn larger_hand_built_total_wins() {
    // Candidate B sees more uncertain, deeper pixels.
    let d = DepthMap {
        depth: crate::image::ScalarMap::filled(4, 4, 1.0),
    };
    let low = crate::uncertainty::UncertaintyMap::filled(4, 4, 0.1);
    let high = crate::uncertainty::UncertaintyMap::filled(4, 4, 0.6);
    let zero = crate::uncertainty::UncertaintyMap::filled(4, 4, 0.0);
    let w = ScoreWeights::default();
    let a = total_score(&d, &low, &zero, &w, 1.0).unwrap();
    let b = total_score(&d, &high, &zero, &w, 1.0).unwrap();
    let scores = [ViewScore { view_id: 0, ..a }, ViewScore { view_id: 1, ..b }];
    assert_eq!(argmax_by_total(&scores).map(|k| scores[k].view_id), Some(1));
}

#[test]
fn single_unselected_candidate_is_chosen() {
    let f = fixture(1, 5, 12);
    let mut cands = f.candidates.clone();
    for i in [0, 1, 3, 4] {
        cands.select(i).unwrap();
    }
    let gt = GroundTruthRenders::render(&f.gt, &cands.cameras, &RenderOptions::default()).unwrap();
    let uq = UqContext::default();
    let ctx = SelectionContext {
        uq: &uq,
        render: &RenderOptions::default(),
        gt: Some(&gt),
        round: 0,
    };
    let model = init_scene([1.0; 3], 10, 2, [0.0; 3]).unwrap();
    for policy in [Policy::Random { seed: 9 }, Policy::OracleSsim, heuristic(ScoreWeights::default())] {
        assert_eq!(select_next_view(&model, &cands, &policy, &ctx).unwrap().0, 2);
    }
    cands.select(2).unwrap();
    assert!(select_next_view(&model, &cands, &Policy::OracleSsim, &ctx).is_err());
}

#[test]
fn oracle_selection_matches_exhaustive_scoring() {
    let f = fixture(3, 32, 24);
    let opts = RenderOptions::default();
    let gt = GroundTruthRenders::render(&f.gt, &f.candidates.cameras, &opts).unwrap();
    let uq = UqContext::default();
    let ctx = SelectionContext {
        uq: &uq,
        render: &opts,
        gt: Some(&gt),
        round: 0,
    };
    let mut cands = f.candidates.clone();
    cands.select(0).unwrap();
    let model = init_scene([1.0; 3], 80, 5, [0.0; 3]).unwrap();
    let (chosen, scores) = select_next_view(&model, &cands, &Policy::OracleSsim, &ctx).unwrap();
    assert_eq!(scores.len(), 31);
    let brute: Vec<(usize, f64)> = (1..32)
        .map(|i| {
            let (img, _) = render_with(&model, &f.candidates.cameras[i], &opts).unwrap();
            (i, oracle_uncertainty(&img.color, &gt.views[i].0).unwrap().mean())
        })
        .collect();
    let best = brute.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(brute.iter().find(|b| b.1 == best).unwrap().0, chosen);
}

#[test]
fn selection_is_permutation_invariant() {
    let f = fixture(4, 12, 16);
    let opts = RenderOptions::default();
    let uq = UqContext::default();
    let model = init_scene([1.0; 3], 60, 6, [0.0; 3]).unwrap();
    let policy = heuristic(ScoreWeights::default());
    let pick = |cams: Vec<Camera>| {
        let set = ViewpointSet::new(cams);
        let ctx = SelectionContext {
            uq: &uq,
            render: &opts,
            gt: None,
            round: 0,
        };
        let (i, _) = select_next_view(&model, &set, &policy, &ctx).unwrap();
        set.cameras[i].clone()
    };
    let base = pick(f.candidates.cameras.clone());
    let mut rev = f.candidates.cameras.clone();
    rev.reverse();
    assert_eq!(pick(rev), base);
}

#[test]
fn zero_addition_run_is_a_pure_fit() {
    let f = fixture(5, 8, 12);
    let sched = small_schedule().truncated(0);
    let optim = OptimConfig::default();
    let log = run_active_loop(
        &f.gt,
        &f.candidates,
        &Schedule {
            total_iters: 20,
            ..sched
        },
        &Policy::OracleSsim,
        &optim,
        &f.test,
        &small_setup(5, f.diameter),
    )
    .unwrap();
    assert!(log.records.is_empty());
    assert_eq!(log.curve.len(), 1);
    assert_eq!(log.curve[0].iteration, 20);
    assert_eq!(log.view_sequence(), vec![0, 1]);
}

#[test]
fn random_runs_repeat_exactly() {
    let f = fixture(6, 10, 12);
    let optim = OptimConfig::default();
    let run = || {
        run_active_loop(
            &f.gt,
            &f.candidates,
            &small_schedule(),
            &Policy::Random { seed: 6 },
            &optim,
            &f.test,
            &small_setup(6, f.diameter),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.view_sequence(), b.view_sequence());
    assert_eq!(a.to_json(), b.to_json());
    let seq = a.view_sequence();
    assert_eq!(seq.iter().collect::<BTreeSet<_>>().len(), seq.len());
}

#[test]
fn seeded_random_initial_views_are_distinct() {
    let setup = LoopSetup {
        seed: 11,
        initial_views: InitialViews::SeededRandom,
        ..Default::default()
    };
    let v = initial_views(50, &Schedule::default(), &setup);
    assert_eq!(v.len(), 4);
    assert_eq!(v.iter().collect::<BTreeSet<_>>().len(), 4);
    assert_eq!(v, initial_views(50, &Schedule::default(), &setup));
}

#[test]
fn test_views_must_differ_from_candidates() {
    let f = fixture(7, 8, 12);
    let test = TestSet::render(&f.gt, vec![f.candidates.cameras[3].clone()], &RenderOptions::default()).unwrap();
    let err = run_active_loop(
        &f.gt,
        &f.candidates,
        &small_schedule(),
        &Policy::OracleSsim,
        &OptimConfig::default(),
        &test,
        &small_setup(7, f.diameter),
    );
    assert!(err.is_err());
    let too_few = ViewpointSet::new(f.candidates.cameras[..3].to_vec());
    assert!(run_active_loop(
        &f.gt,
        &too_few,
        &small_schedule(),
        &Policy::OracleSsim,
        &OptimConfig::default(),
        &f.test,
        &small_setup(7, f.diameter)
    )
    .is_err());
}

#[test]
fn logged_rounds_replay_from_checkpoints() {
    let f = fixture(8, 10, 16);
    let optim = OptimConfig::default();
    let setup = small_setup(8, f.diameter);
    let policy = heuristic(ScoreWeights::default());
    let log = run_active_loop(&f.gt, &f.candidates, &small_schedule(), &policy, &optim, &f.test, &setup).unwrap();
    assert_eq!(log.records.len(), 2);
    assert_eq!(log.checkpoints.len(), 3);
    let seq = log.view_sequence();
    for (k, rec) in log.records.iter().enumerate() {
        let mut cands = f.candidates.clone();
        for &v in &seq[..2 + k] {
            cands.select(v).unwrap();
        }
        let ctx = SelectionContext {
            uq: &setup.uq,
            render: &optim.render,
            gt: None,
            round: k,
        };
        let (chosen, scores) = select_next_view(&log.checkpoints[k].scene, &cands, &policy, &ctx).unwrap();
        assert_eq!(chosen, rec.selected_view);
        assert_eq!(scores, rec.scores);
    }
    let replay = per_step_curve(&log, &f.test, &optim.render).unwrap();
    assert_eq!(replay, log.curve);
    let text = log.scores_csv();
    assert!(text.starts_with(SCORE_CSV_HEADER));
    assert_eq!(text.lines().count(), 1 + 8 + 7);
    let back: RunLog = serde_json::from_str(&log.to_json()).unwrap();
    assert_eq!(back.records, log.records);
}

#[test]
fn zero_weights_match_blend_only() {
    let f = fixture(9, 10, 12);
    let optim = OptimConfig::default();
    let setup = small_setup(9, f.diameter);
    let zero = ScoreWeights {
        lambda0: 0.0,
        lambda1: 0.0,
        lambda2: 0.0,
    };
    let a = run_active_loop(&f.gt, &f.candidates, &small_schedule(), &heuristic(zero), &optim, &f.test, &setup).unwrap();
    let blend_only = Policy::Uq(UqScorer {
        predictor: PredictorKind::Heuristic,
        weights: ScoreWeights::default(),
        variant: ScoreVariant::BlendOnly,
    });
    let b = run_active_loop(&f.gt, &f.candidates, &small_schedule(), &blend_only, &optim, &f.test, &setup).unwrap();
    assert_eq!(a.view_sequence(), b.view_sequence());
}

fn oracle_scorer() -> UqScorer {
    UqScorer {
        predictor: PredictorKind::Oracle,
        weights: ScoreWeights::default(),
        variant: ScoreVariant::Full,
    }
}

#[test]
fn perfect_model_paths_score_zero() {
    let f = fixture(10, 4, 12);
    let path = interpolate(&f.candidates.cameras[0], &f.candidates.cameras[1], 3);
    let s = score_path(&path, &f.gt, &oracle_scorer(), &UqContext::default(), &RenderOptions::default(), Some(&f.gt)).unwrap();
    assert_eq!(s, 0.0);
}

fn interpolate(a: &Camera, b: &Camera, k: usize) -> Vec<Camera> {
    crate::scene::interpolate_path(a, b, k).unwrap()
}

#[test]
fn path_score_is_mean_of_frame_totals() {
    let f = fixture(11, 6, 16);
    let opts = RenderOptions::default();
    let ctx = UqContext {
        depth_scale: f.diameter,
        ..Default::default()
    };
    let model = init_scene([1.0; 3], 50, 3, [0.0; 3]).unwrap();
    let scorer = oracle_scorer();
    let path = interpolate(&f.candidates.cameras[0], &f.candidates.cameras[4], 5);
    let frame_total = |cam: &Camera| {
        let (img, d) = render_with(&model, cam, &opts).unwrap();
        let (gi, gd) = render_with(&f.gt, cam, &opts).unwrap();
        let r = oracle_uncertainty(&img.color, &gi.color).unwrap();
        let du = oracle_depth_uncertainty(&d, &gd, f.diameter).unwrap();
        total_score(&d, &r, &du, &scorer.weights, f.diameter).unwrap().total
    };
    let expected = path.iter().map(frame_total).sum::<f64>() / 5.0;
    let got = score_path(&path, &model, &scorer, &ctx, &opts, Some(&f.gt)).unwrap();
    assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    let one = score_path(&path[..1], &model, &scorer, &ctx, &opts, Some(&f.gt)).unwrap();
    assert_eq!(one, frame_total(&path[0]));
}

#[test]
fn path_selection_contract() {
    let f = fixture(12, 6, 12);
    let opts = RenderOptions::default();
    let ctx = UqContext::default();
    let model = init_scene([1.0; 3], 30, 4, [0.0; 3]).unwrap();
    let s = oracle_scorer();
    let p = interpolate(&f.candidates.cameras[0], &f.candidates.cameras[1], 3);
    assert_eq!(select_path(std::slice::from_ref(&p), &model, &s, &ctx, &opts, Some(&f.gt)).unwrap(), 0);
    assert!(select_path(&[], &model, &s, &ctx, &opts, Some(&f.gt)).is_err());
    assert!(score_path(&[], &model, &s, &ctx, &opts, Some(&f.gt)).is_err());
    assert!(score_path(&p, &model, &s, &ctx, &opts, None).is_err());
    // Identical paths tie; the first wins.
    assert_eq!(select_path(&[p.clone(), p], &model, &s, &ctx, &opts, Some(&f.gt)).unwrap(), 0);
}
