//! Experiment configuration: one TOML document holding every tunable.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/default"
//! resolution = "64x64"
//! policy = "uq"
//!
//! [scene]        # layout, n_gaussians, bounds, background
//! [candidates]   # n, radius, hemisphere, fov_deg
//! [test_views]   # n, radius
//! [schedule]     # total_iters, rescale, add_iters, n_initial
//! [optim]        # learning rates, lambda_ssim, [optim.render] eps_cov, alpha_max, ...
//! [weights]      # lambda0, lambda1, lambda2
//! [uq]           # predictor, depth_normalization, model_path
//! [init]         # n_init, initial_views
//! [fit]          # n_views
//! [ablate]       # seeds
//! [predictor_training]  # scene seeds and the quality ladder
//! ```
//!
//! A single `seed` feeds every component through named sub-streams; the
//! scene, candidate, loop and random-policy seeds are all derived from it.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::OptimConfig;
use crate::planner::{InitialViews, LoopSetup, Schedule};
use crate::scene::{SceneSpec, ViewpointSpec};
use crate::scoring::{ScoreVariant, ScoreWeights};
use crate::uncertainty::{DatasetConfig, UqContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("resolution must look like WxH, got {s:?}"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Self { width, height })
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub n: usize,
    pub radius: f64,
    pub hemisphere: bool,
    pub fov_deg: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            n: 256,
            radius: 3.5,
            hemisphere: false,
            fov_deg: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestViewConfig {
    pub n: usize,
    /// Differs from the candidate radius so test poses never coincide with candidates.
    pub radius: f64,
}

impl Default for TestViewConfig {
    fn default() -> Self {
        Self { n: 40, radius: 3.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_iters: u64,
    /// Scale the default additions by total_iters / 30000.
    pub rescale: bool,
    /// Explicit additions, used when `rescale` is false.
    pub add_iters: Vec<u64>,
    pub n_initial: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = Schedule::default();
        Self {
            total_iters: 3000,
            rescale: true,
            add_iters: s.add_iters,
            n_initial: s.n_initial,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<Schedule> {
        if self.rescale {
            let s = Schedule::rescaled(self.total_iters)?;
            if self.n_initial != s.n_initial {
                let s = Schedule {
                    n_initial: self.n_initial,
                    n_total: self.n_initial + s.add_iters.len(),
                    ..s
                };
                s.validate()?;
                return Ok(s);
            }
            return Ok(s);
        }
        let s = Schedule {
            n_total: self.n_initial + self.add_iters.len(),
            add_iters: self.add_iters.clone(),
            n_initial: self.n_initial,
            total_iters: self.total_iters,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorChoice {
    Oracle,
    Heuristic,
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthNormalization {
    /// Divide depth by the scene diameter.
    Diameter,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    pub predictor: PredictorChoice,
    pub depth_normalization: DepthNormalization,
    /// Trained predictor JSON; trained on the fly when absent.
    pub model_path: Option<PathBuf>,
    pub ridge_lambda: f64,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorChoice::Oracle,
            depth_normalization: DepthNormalization::Diameter,
            model_path: None,
            ridge_lambda: crate::uncertainty::DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub n_init: usize,
    pub initial_views: InitialViews,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            n_init: 300,
            initial_views: InitialViews::LowestIndex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCommandConfig {
    pub n_views: usize,
}

impl Default for FitCommandConfig {
    fn default() -> Self {
        Self { n_views: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorTrainingConfig {
    /// Ground-truth scene seeds, kept apart from evaluation seeds.
    pub scene_seeds: Vec<u64>,
    pub holdout_views: usize,
    pub dataset: DatasetConfig,
}

impl Default for PredictorTrainingConfig {
    fn default() -> Self {
        Self {
            scene_seeds: vec![1001, 1002, 1003],
            holdout_views: 8,
            dataset: DatasetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Random,
    OracleSsim,
    /// UQ policy with the configured predictor and all score terms.
    Uq,
    BlendOnly,
    NoDepthUq,
    NoDepthBlending,
    DepthSquared,
}

impl PolicyName {
    pub fn variant(self) -> Option<ScoreVariant> {
        match self {
            PolicyName::Random | PolicyName::OracleSsim => None,
            PolicyName::Uq => Some(ScoreVariant::Full),
            PolicyName::BlendOnly => Some(ScoreVariant::BlendOnly),
            PolicyName::NoDepthUq => Some(ScoreVariant::NoDepthUq),
            PolicyName::NoDepthBlending => Some(ScoreVariant::NoDepthBlending),
            PolicyName::DepthSquared => Some(ScoreVariant::DepthSquared),
        }
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Wrap {
            p: PolicyName,
        }
        toml::from_str::<Wrap>(&format!("p = {s:?}"))
            .map(|w| w.p)
            .map_err(|_| Error::Config(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub resolution: Resolution,
    pub policy: PolicyName,
    pub scene: SceneSpec,
    pub candidates: CandidateConfig,
    pub test_views: TestViewConfig,
    pub schedule: ScheduleConfig,
    pub optim: OptimConfig,
    pub weights: ScoreWeights,
    pub uq: UqConfig,
    pub init: InitConfig,
    pub fit: FitCommandConfig,
    pub ablate: AblateConfig,
    pub predictor_training: PredictorTrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            resolution: Resolution { width: 64, height: 64 },
            policy: PolicyName::Uq,
            scene: SceneSpec::default(),
            candidates: CandidateConfig::default(),
            test_views: TestViewConfig::default(),
            schedule: ScheduleConfig::default(),
            optim: OptimConfig::default(),
            weights: ScoreWeights::default(),
            uq: UqConfig::default(),
            init: InitConfig::default(),
            fit: FitCommandConfig::default(),
            ablate: AblateConfig::default(),
            predictor_training: PredictorTrainingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form with the output directory blanked,
    /// hex encoded. Identical experiments hash alike wherever they are written.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        check_scene_spec(&self.scene)?;
        if self.candidates.n == 0 || !(self.candidates.radius > 0.0) {
            return Err(Error::Config("candidates need n >= 1 and radius > 0".into()));
        }
        if !(self.candidates.fov_deg > 0.0 && self.candidates.fov_deg < 180.0) {
            return Err(Error::Config("fov_deg must be in (0, 180)".into()));
        }
        if !(self.test_views.radius > 0.0) {
            return Err(Error::Config("test view radius must be positive".into()));
        }
        if self.init.n_init == 0 {
            return Err(Error::Config("init.n_init must be >= 1".into()));
        }
        if self.fit.n_views == 0 {
            return Err(Error::Config("fit.n_views must be >= 1".into()));
        }
        if !(self.uq.ridge_lambda > 0.0) {
            return Err(Error::Config("uq.ridge_lambda must be positive".into()));
        }
        self.schedule.build()?;
        self.optim.validate()?;
        self.weights.validate()?;
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            ..self.scene.clone()
        }
    }

    pub fn candidate_spec(&self) -> ViewpointSpec {
        ViewpointSpec {
            n: self.candidates.n,
            radius: self.candidates.radius,
            center: [0.0; 3],
            seed: self.seed,
            hemisphere: self.candidates.hemisphere,
            fov_deg: self.candidates.fov_deg,
            width: self.resolution.width,
            height: self.resolution.height,
        }
    }

    pub fn test_view_spec(&self) -> ViewpointSpec {
        ViewpointSpec {
            n: self.test_views.n,
            radius: self.test_views.radius,
            seed: crate::rng::derive_seed(self.seed, crate::rng::Stream::Dataset),
            hemisphere: false,
            ..self.candidate_spec()
        }
    }

    pub fn depth_scale(&self) -> f64 {
        match self.uq.depth_normalization {
            DepthNormalization::Diameter => self.scene.diameter(),
            DepthNormalization::Raw => 1.0,
        }
    }

    pub fn uq_context(&self) -> UqContext {
        UqContext {
            depth_scale: self.depth_scale(),
            normalize_depth_features: self.uq.depth_normalization == DepthNormalization::Diameter,
            ..Default::default()
        }
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            total_iters: self.schedule.total_iters,
            ..self.optim.clone()
        }
    }

    pub fn loop_setup(&self) -> LoopSetup {
        LoopSetup {
            seed: self.seed,
            n_init: self.init.n_init,
            init_bounds: self.scene.bounds,
            initial_views: self.init.initial_views,
            uq: self.uq_context(),
        }
    }
}

fn check_scene_spec(s: &SceneSpec) -> Result<()> {
    s.layout.parse::<crate::scene::Layout>()?;
    if s.n_gaussians == 0 {
        return Err(Error::Config("scene.n_gaussians must be >= 1".into()));
    }
    if s.bounds.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::Config("scene.bounds must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.validate().unwrap();
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_toml("seed = 4\nresolution = \"16x12\"\n[weights]\nlambda0 = 0.5\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.resolution, Resolution { width: 16, height: 12 });
        assert_eq!(c.weights.lambda0, 0.5);
        assert_eq!(c.weights.lambda1, 0.1);
        assert_ne!(c.hash(), RunConfig::default().hash());
        let moved = RunConfig {
            out_dir: "elsewhere".into(),
            ..c.clone()
        };
        assert_eq!(moved.hash(), c.hash());
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!("64".parse::<Resolution>().is_err());
        assert!("0x4".parse::<Resolution>().is_err());
        let mut c = RunConfig::default();
        c.scene.layout = "teapot".into();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.weights.lambda2 = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn policy_names_parse() {
        assert_eq!("no_depth_uq".parse::<PolicyName>().unwrap(), PolicyName::NoDepthUq);
        assert_eq!("random".parse::<PolicyName>().unwrap(), PolicyName::Random);
        assert!("best".parse::<PolicyName>().is_err());
    }

    #[test]
    fn default_schedule_rescales_to_total_iters() {
        let s = RunConfig::default().schedule.build().unwrap();
        assert_eq!(s.total_iters, 3000);
        assert_eq!(s.add_iters.len(), 16);
        assert_eq!(s.n_total, 20);
    }
}
