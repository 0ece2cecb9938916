//! Run configuration: one JSON tree with full defaults for both twins.
//!
//! Unknown keys are rejected with the offending path. Unset fields take the
//! chosen environment's defaults; flags override file values. The
//! experiment configs describe scalar plants (both twins are 1-D);
//! higher-dimensional setups go through the library API.

use serde::{Deserialize, Serialize};

use dwmlab_core::attack::AttackScenario;
use dwmlab_core::env::{
    DetectorSetup, EnvSpec, GmmComponent, GmmSurrogate, PlantSetup, RewardWeights,
};
use dwmlab_core::plant::{Controller, PlantModel, Segment};
use dwmlab_core::rng::Rng;

use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    MtcTwin,
    MotorTwin,
    Custom,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantFileConfig {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    #[serde(default)]
    pub mu0: f64,
    #[serde(default)]
    pub sigma0: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControllerFileConfig {
    pub kp: f64,
    pub setpoint: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GmmComponentConfig {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SegmentFileConfig {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub setpoint: f64,
    #[serde(default)]
    pub gmm: Vec<GmmComponentConfig>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DetectorFileConfig {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BeliefFileConfig {
    #[serde(default)]
    pub attack_prior: Option<f64>,
    #[serde(default)]
    pub onset_rate: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
}

/// Watermark policy of a simulation arm.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    None,
    Constant(f64),
    Ddpg(String),
}

impl Default for PolicyChoice {
    fn default() -> Self {
        PolicyChoice::None
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WatermarkFileConfig {
    #[serde(default)]
    pub policy: PolicyChoice,
    #[serde(default)]
    pub u_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// No adversary.
    None,
    /// The configured scenario runs in every replication.
    Fixed,
    /// Each episode draws presence and onset from the belief prior.
    Prior,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AttackKindChoice {
    Replay,
    FlipPre,
    FlipPost,
    Injection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackFileConfig {
    pub mode: AttackMode,
    #[serde(default = "default_attack_kind")]
    pub kind: AttackKindChoice,
    #[serde(default = "default_onset")]
    pub onset: usize,
    #[serde(default)]
    pub duration: Option<usize>,
    #[serde(default)]
    pub delta_t: usize,
    #[serde(default = "default_true")]
    pub negate_control: bool,
    /// Scalar injection sequence (injection attacks only).
    #[serde(default)]
    pub injection: Option<Vec<f64>>,
}

fn default_attack_kind() -> AttackKindChoice {
    AttackKindChoice::Replay
}

fn default_onset() -> usize {
    200
}

fn default_true() -> bool {
    true
}

impl Default for AttackFileConfig {
    fn default() -> Self {
        AttackFileConfig {
            mode: AttackMode::None,
            kind: AttackKindChoice::Replay,
            onset: 200,
            duration: None,
            delta_t: 0,
            negate_control: true,
            injection: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RewardFileConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for RewardFileConfig {
    fn default() -> Self {
        RewardFileConfig { w1: 0.35, w2: 0.35, w3: 0.30 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingFileConfig {
    #[serde(default)]
    pub episodes: Option<usize>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_buffer")]
    pub buffer: usize,
    #[serde(default = "default_ou_theta")]
    pub ou_theta: f64,
    #[serde(default = "default_ou_sigma")]
    pub ou_sigma: f64,
    #[serde(default = "default_ou_decay")]
    pub ou_decay: f64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_tau() -> f64 {
    5e-3
}
fn default_gamma() -> f64 {
    0.99
}
fn default_batch() -> usize {
    128
}
fn default_buffer() -> usize {
    1_000_000
}
fn default_ou_theta() -> f64 {
    0.15
}
fn default_ou_sigma() -> f64 {
    0.99
}
fn default_ou_decay() -> f64 {
    0.995
}
fn default_checkpoint_every() -> usize {
    50
}

impl Default for TrainingFileConfig {
    fn default() -> Self {
        TrainingFileConfig {
            episodes: None,
            hidden: None,
            learning_rate: default_lr(),
            tau: default_tau(),
            gamma: default_gamma(),
            batch: default_batch(),
            buffer: default_buffer(),
            ou_theta: default_ou_theta(),
            ou_sigma: default_ou_sigma(),
            ou_decay: default_ou_decay(),
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

/// Benchmark arm choice; `TableV` expands to the five published constants.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ArmChoice {
    None,
    Low,
    High,
    TableV,
    Ddpg,
    Constant(f64),
}

/// The five constant-variance baselines identified from the stepper-motor
/// LTI approximation under shrinking loss budgets (mV^2), consumed verbatim.
pub const TABLE_V_VARIANCES: [f64; 5] = [0.8655, 0.4327, 0.1731, 0.0865, 0.0432];

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkFileConfig {
    #[serde(default)]
    pub arms: Option<Vec<ArmChoice>>,
    #[serde(default)]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub low_variance: Option<f64>,
    #[serde(default)]
    pub high_variance: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepFileConfig {
    #[serde(default)]
    pub variances: Option<Vec<f64>>,
    #[serde(default)]
    pub episodes_per_point: Option<usize>,
}

/// The full run configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: Environment,
    #[serde(default)]
    pub plant: Option<PlantFileConfig>,
    #[serde(default)]
    pub controller: Option<ControllerFileConfig>,
    #[serde(default)]
    pub segments: Option<Vec<SegmentFileConfig>>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub decision_block: Option<usize>,
    #[serde(default)]
    pub processed_block: Option<usize>,
    #[serde(default)]
    pub detector: DetectorFileConfig,
    #[serde(default)]
    pub belief: BeliefFileConfig,
    #[serde(default)]
    pub watermark: WatermarkFileConfig,
    #[serde(default)]
    pub attack: AttackFileConfig,
    #[serde(default)]
    pub reward: RewardFileConfig,
    #[serde(default)]
    pub training: TrainingFileConfig,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Worker threads for replication fan-out; 0 = auto.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub benchmark: BenchmarkFileConfig,
    #[serde(default)]
    pub sweep: SweepFileConfig,
}

fn default_replications() -> usize {
    40
}

fn default_seed() -> u64 {
    7
}

impl RunConfig {
    pub fn defaults(environment: Environment) -> Self {
        RunConfig {
            environment,
            plant: None,
            controller: None,
            segments: None,
            horizon: None,
            decision_block: None,
            processed_block: None,
            detector: DetectorFileConfig::default(),
            belief: BeliefFileConfig::default(),
            watermark: WatermarkFileConfig::default(),
            attack: AttackFileConfig::default(),
            reward: RewardFileConfig::default(),
            training: TrainingFileConfig::default(),
            replications: default_replications(),
            seed: default_seed(),
            output_dir: None,
            workers: 0,
            benchmark: BenchmarkFileConfig::default(),
            sweep: SweepFileConfig::default(),
        }
    }

    /// Training episode count: the study defaults differ per twin.
    pub fn training_episodes(&self) -> usize {
        self.training.episodes.unwrap_or(match self.environment {
            Environment::MotorTwin => 30,
            _ => 200,
        })
    }

    /// Network width: the study defaults differ per twin.
    pub fn hidden_width(&self) -> usize {
        self.training.hidden.unwrap_or(match self.environment {
            Environment::MotorTwin => 64,
            _ => 32,
        })
    }
}

/// Parse a config file, reporting the JSON path of any offending key.
pub fn load_config(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

/// Build the environment spec from a (possibly partial) config.
pub fn build_spec(cfg: &RunConfig) -> CliResult<EnvSpec> {
    let mut spec = match cfg.environment {
        Environment::MtcTwin => EnvSpec::mtc_twin(),
        Environment::MotorTwin => EnvSpec::motor_twin(),
        Environment::Custom => {
            // custom environments start from the machine-tool defaults and
            // must specify their plant explicitly
            let mut s = EnvSpec::mtc_twin();
            if cfg.plant.is_none() && cfg.segments.is_none() {
                return Err(CliError::Config(
                    "custom environment requires `plant` or `segments`".into(),
                ));
            }
            s.state_scale = 1.0;
            s
        }
    };

    if let Some(p) = &cfg.plant {
        let model = PlantModel::scalar(p.a, p.b, p.q, p.mu0, p.sigma0)
            .map_err(|e| CliError::Config(format!("at `plant`: {e}")))?;
        let ctrl = cfg
            .controller
            .as_ref()
            .map(|c| Controller::scalar(c.kp, c.setpoint))
            .unwrap_or_else(|| Controller::scalar(1.0, 0.012));
        if let Some(c) = &cfg.controller {
            spec.state_scale = c.setpoint.abs().max(1e-9);
        }
        spec.plant = PlantSetup::Single { model, controller: ctrl };
    } else if let Some(c) = &cfg.controller {
        if let PlantSetup::Single { controller, .. } = &mut spec.plant {
            *controller = Controller::scalar(c.kp, c.setpoint);
            spec.state_scale = c.setpoint.abs().max(1e-9);
        }
    }

    if let Some(segs) = &cfg.segments {
        if segs.is_empty() {
            return Err(CliError::Config("at `segments`: list must not be empty".into()));
        }
        let mut segments = Vec::new();
        let mut surrogates = Vec::new();
        let mut scale = 0.0f64;
        for (i, s) in segs.iter().enumerate() {
            let model = PlantModel::scalar(s.a, s.b, s.q, 0.0, 0.0)
                .map_err(|e| CliError::Config(format!("at `segments[{i}]`: {e}")))?;
            segments.push(Segment {
                model,
                controller: Controller::scalar(1.0, s.setpoint),
                switch_at: s.setpoint,
            });
            if s.gmm.is_empty() {
                return Err(CliError::Config(format!(
                    "at `segments[{i}].gmm`: piecewise segments need a control mixture"
                )));
            }
            let comps = s
                .gmm
                .iter()
                .map(|c| GmmComponent { weight: c.weight, mean: c.mean, variance: c.variance })
                .collect();
            surrogates.push(
                GmmSurrogate::new(comps)
                    .map_err(|e| CliError::Config(format!("at `segments[{i}].gmm`: {e}")))?,
            );
            scale = scale.max(s.setpoint.abs());
        }
        spec.plant = PlantSetup::Piecewise { segments, surrogates };
        spec.state_scale = scale.max(1e-9);
    }

    if let Some(h) = cfg.horizon {
        if h == 0 {
            return Err(CliError::Config("at `horizon`: must be positive".into()));
        }
        spec.horizon = h;
        spec.onset_rate = 1.0 / h as f64;
    }
    if let Some(d) = cfg.decision_block {
        spec.decision_block = d.max(1);
    }
    if let Some(p) = cfg.processed_block {
        spec.processed_block = p.max(1);
    }
    if spec.processed_block > spec.decision_block {
        return Err(CliError::Config(
            "at `processed_block`: must not exceed `decision_block`".into(),
        ));
    }

    match (cfg.detector.alpha, cfg.detector.threshold) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "at `detector`: set `alpha` or `threshold`, not both".into(),
            ))
        }
        (Some(a), None) => {
            if !(0.0 < a && a < 1.0) {
                return Err(CliError::Config("at `detector.alpha`: must lie in (0,1)".into()));
            }
            spec.detector = DetectorSetup::Alpha(a);
        }
        (None, Some(g)) => {
            if g <= 0.0 {
                return Err(CliError::Config("at `detector.threshold`: must be positive".into()));
            }
            spec.detector = DetectorSetup::Threshold(g);
        }
        (None, None) => {}
    }

    if let Some(q) = cfg.belief.attack_prior {
        if !(0.0 < q && q < 1.0) {
            return Err(CliError::Config("at `belief.attack_prior`: must lie in (0,1)".into()));
        }
        spec.attack_prior = q;
    }
    if let Some(r) = cfg.belief.onset_rate {
        if !(0.0 < r && r < 1.0) {
            return Err(CliError::Config("at `belief.onset_rate`: must lie in (0,1)".into()));
        }
        spec.onset_rate = r;
    }
    if let Some(w) = cfg.belief.window {
        if w == 0 {
            return Err(CliError::Config("at `belief.window`: must be positive".into()));
        }
        spec.w_beta = w;
    }
    if let Some(u) = cfg.watermark.u_max {
        if u <= 0.0 {
            return Err(CliError::Config("at `watermark.u_max`: must be positive".into()));
        }
        spec.u_max = u;
    }
    if cfg.reward.w1 < 0.0 || cfg.reward.w2 < 0.0 || cfg.reward.w3 < 0.0 {
        return Err(CliError::Config("at `reward`: weights must be nonnegative".into()));
    }
    spec.weights = RewardWeights { w1: cfg.reward.w1, w2: cfg.reward.w2, w3: cfg.reward.w3 };

    Ok(spec)
}

/// Build the fixed attack scenario described by the config.
pub fn build_fixed_scenario(cfg: &RunConfig, spec: &EnvSpec) -> CliResult<AttackScenario> {
    let duration = cfg.attack.duration.unwrap_or(spec.horizon);
    let mut scenario = match cfg.attack.kind {
        AttackKindChoice::Replay => AttackScenario::replay(cfg.attack.onset, duration),
        AttackKindChoice::FlipPre => AttackScenario::flip(cfg.attack.onset, duration, false),
        AttackKindChoice::FlipPost => AttackScenario::flip(cfg.attack.onset, duration, true),
        AttackKindChoice::Injection => {
            let seq = cfg.attack.injection.clone().ok_or_else(|| {
                CliError::Config("at `attack.injection`: injection attacks need a sequence".into())
            })?;
            AttackScenario::injection(cfg.attack.onset, seq.into_iter().map(|v| vec![v]).collect())
        }
    };
    scenario.delta_t = cfg.attack.delta_t;
    if !cfg.attack.negate_control {
        scenario.control_override = dwmlab_core::attack::ControlOverride::Keep;
    }
    scenario.validate().map_err(CliError::from)?;
    Ok(scenario)
}

/// Scenario for one replication, honoring the attack mode.
pub fn scenario_for_episode(
    cfg: &RunConfig,
    spec: &EnvSpec,
    prior_rng: &mut Rng,
) -> CliResult<AttackScenario> {
    match cfg.attack.mode {
        AttackMode::None => Ok(AttackScenario::none()),
        AttackMode::Fixed => build_fixed_scenario(cfg, spec),
        AttackMode::Prior => Ok(dwmlab_core::env::sample_prior_scenario(spec, prior_rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let text = r#"{"environment": "mtc_twin", "detector": {"alhpa": 0.005}}"#;
        match load_config(text) {
            Err(CliError::Config(msg)) => {
                assert!(msg.contains("detector"), "msg: {msg}");
                assert!(msg.contains("alhpa"), "msg: {msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_resolves_to_twin_defaults() {
        let cfg = load_config(r#"{"environment": "mtc_twin"}"#).unwrap();
        let spec = build_spec(&cfg).unwrap();
        assert_eq!(spec.horizon, 1000);
        assert_eq!(spec.decision_block, 1);
        assert_eq!(spec.u_max, 2.5e-3);
        let cfg = load_config(r#"{"environment": "motor_twin"}"#).unwrap();
        let spec = build_spec(&cfg).unwrap();
        assert_eq!(spec.horizon, 41_000);
        assert_eq!(spec.decision_block, 500);
        assert_eq!(spec.processed_block, 100);
        assert!(matches!(spec.detector, DetectorSetup::Threshold(g) if g == 16.0));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let cfg = load_config(
            r#"{"environment": "mtc_twin", "detector": {"alpha": 0.005, "threshold": 16.0}}"#,
        )
        .unwrap();
        assert!(build_spec(&cfg).is_err());
        let cfg =
            load_config(r#"{"environment": "mtc_twin", "detector": {"alpha": 1.5}}"#).unwrap();
        assert!(build_spec(&cfg).is_err());
        let cfg = load_config(r#"{"environment": "custom"}"#).unwrap();
        assert!(build_spec(&cfg).is_err());
    }

    #[test]
    fn policy_choice_json_shapes() {
        let cfg = load_config(
            r#"{"environment": "mtc_twin", "watermark": {"policy": {"constant": 2.5e-3}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.watermark.policy, PolicyChoice::Constant(2.5e-3));
        let cfg =
            load_config(r#"{"environment": "mtc_twin", "watermark": {"policy": "none"}}"#).unwrap();
        assert_eq!(cfg.watermark.policy, PolicyChoice::None);
        let cfg = load_config(
            r#"{"environment": "mtc_twin", "watermark": {"policy": {"ddpg": "ckpt.json"}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.watermark.policy, PolicyChoice::Ddpg("ckpt.json".into()));
    }
}
