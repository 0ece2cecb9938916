//! The decision environment: plant + watermark + attack + detector + belief,
//! stepped one watermark-covariance action at a time, with the reward of the
//! adaptive-watermarking MDP.
//!
//! Two presets are provided. The machine-tool twin decides every fast step
//! and processes every sample. The stepper-motor twin holds each action for
//! `decision_block` fast steps and forwards only the first `processed_block`
//! samples of each block to the detector and belief, mirroring the batched
//! telemetry of the physical testbed.
//!
//! The reward's control-degradation term compares against a shadow plant
//! that shares the true plant's noise realization and adversary actions but
//! carries no watermark; its controller closes the loop on its own output,
//! so the difference isolates exactly the watermark's effect.

use alloc::vec;
use alloc::vec::Vec;

use crate::attack::{AttackKind, AttackScenario, RecordingBuffer};
use crate::belief::{self, BeliefParams, BeliefState};
use crate::detect::{alarm, statistic, DetectorConfig, EstimatorMode};
use crate::error::Error;
use crate::linalg::{vec_sub, Matrix};
use crate::math;
use crate::plant::{control, step_with_noise, Controller, PlantModel, Segment};
use crate::rng::{Rng, Streams};
use crate::watermark::{inject, propagate_moments, MomentState, WatermarkSchedule};
use crate::Result;

// ---------------------------------------------------------------------------
// Configuration types
// ---------------------------------------------------------------------------

/// Reward weights (energy, deviation, confidence).
#[derive(Clone, Copy, Debug)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl RewardWeights {
    /// The weights used in both studies.
    pub fn standard() -> Self {
        RewardWeights { w1: 0.35, w2: 0.35, w3: 0.30 }
    }
}

/// r = -w1 ||phi||_1 - w2 ||y_wom - y||_2 + w3 |0.5 - d_next|.
pub fn reward_step(phi: &[f64], y_wom: &[f64], y: &[f64], d_next: f64, w: &RewardWeights) -> f64 {
    let dev = vec_sub(y_wom, y);
    -w.w1 * math::norm1(phi) - w.w2 * math::norm2(&dev) + w.w3 * math::abs(0.5 - d_next)
}

/// One component of a 1-D Gaussian mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Gaussian-mixture surrogate for a segment's control signal.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmSurrogate {
    pub components: Vec<GmmComponent>,
}

impl GmmSurrogate {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| c.weight <= 0.0 || c.variance <= 0.0) {
            return Err(Error::Config("mixture weights and variances must be positive".into()));
        }
        if math::abs(wsum - 1.0) > 1e-9 {
            return Err(Error::Config("mixture weights must sum to 1".into()));
        }
        Ok(GmmSurrogate { components })
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - m) * (c.mean - m)))
            .sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let mut pick = rng.uniform();
        for c in &self.components {
            if pick < c.weight {
                return rng.normal(c.mean, math::sqrt(c.variance));
            }
            pick -= c.weight;
        }
        let last = self.components.last().unwrap();
        rng.normal(last.mean, math::sqrt(last.variance))
    }
}

/// Plant layout plus how control inputs are generated.
#[derive(Clone, Debug)]
pub enum PlantSetup {
    /// One linear model closed by a proportional controller.
    Single { model: PlantModel, controller: Controller },
    /// Piecewise segments driven by per-segment control surrogates.
    Piecewise { segments: Vec<Segment>, surrogates: Vec<GmmSurrogate> },
}

/// Detector calibration choice.
#[derive(Clone, Copy, Debug)]
pub enum DetectorSetup {
    /// Analytic threshold at the (1 - alpha) chi-square quantile.
    Alpha(f64),
    /// Explicit threshold (e.g. the empirically tuned motor value).
    Threshold(f64),
}

/// Static description of an environment.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub plant: PlantSetup,
    /// Episode length in fast steps.
    pub horizon: usize,
    /// Fast steps per decision (action held constant within a block).
    pub decision_block: usize,
    /// Samples per block forwarded to the detector and belief.
    pub processed_block: usize,
    pub detector: DetectorSetup,
    /// Prior attack probability q.
    pub attack_prior: f64,
    /// Geometric onset rate rho.
    pub onset_rate: f64,
    /// Type-II window w_beta in fast steps.
    pub w_beta: usize,
    pub weights: RewardWeights,
    /// Agent action bound.
    pub u_max: f64,
    /// Output scale used to normalize the RL state feature.
    pub state_scale: f64,
}

impl EnvSpec {
    /// Machine-tool digital twin: scalar integrator plant, per-step
    /// decisions, full-history replay prior.
    pub fn mtc_twin() -> Self {
        let model = PlantModel::scalar(1.0, 0.010, 1.3741e-13, 0.0, 0.0).unwrap();
        let controller = Controller::scalar(1.0, 0.012);
        EnvSpec {
            plant: PlantSetup::Single { model, controller },
            horizon: 1000,
            decision_block: 1,
            processed_block: 1,
            detector: DetectorSetup::Alpha(0.005),
            attack_prior: 0.05,
            onset_rate: 1.0 / 1000.0,
            w_beta: 50,
            weights: RewardWeights::standard(),
            u_max: 2.5e-3,
            state_scale: 0.012,
        }
    }

    /// Stepper-motor twin: four identified segments, mixture control
    /// surrogates shaped to finish the profile within the fast-time cap,
    /// 500/100 block cadence, empirically tuned threshold.
    pub fn motor_twin() -> Self {
        let rows: [(f64, f64, f64); 4] = [
            (1.0, 0.0075, 5.57e-6),
            (1.0, 0.0108, 9.81e-6),
            (1.0, 0.0107, 9.38e-6),
            (1.0, 0.0076, 5.57e-6),
        ];
        let setpoints = [46.94, 91.38, 46.92, 2.48];
        let segments: Vec<Segment> = rows
            .iter()
            .zip(&setpoints)
            .map(|(&(a, b, q), &sp)| Segment {
                model: PlantModel::scalar(a, b, q, 0.0, 0.0).unwrap(),
                controller: Controller::scalar(1.0, sp),
                switch_at: sp,
            })
            .collect();
        let mk = |spec: [(f64, f64, f64); 2]| {
            GmmSurrogate::new(
                spec.iter()
                    .map(|&(w, m, v)| GmmComponent { weight: w, mean: m, variance: v })
                    .collect(),
            )
            .unwrap()
        };
        let surrogates = vec![
            mk([(0.4, 0.18, 0.010), (0.6, 0.905, 0.030)]),
            mk([(0.45, 0.12, 0.008), (0.55, 0.637, 0.020)]),
            mk([(0.45, -0.12, 0.008), (0.55, -0.644, 0.020)]),
            mk([(0.4, -0.16, 0.010), (0.6, -0.854, 0.030)]),
        ];
        EnvSpec {
            plant: PlantSetup::Piecewise { segments, surrogates },
            horizon: 41_000,
            decision_block: 500,
            processed_block: 100,
            detector: DetectorSetup::Threshold(16.0),
            attack_prior: 0.05,
            onset_rate: 1.0 / 41_000.0,
            w_beta: 500,
            weights: RewardWeights::standard(),
            u_max: 0.01,
            state_scale: 91.38,
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.plant {
            PlantSetup::Single { model, .. } => model.state_dim(),
            PlantSetup::Piecewise { segments, .. } => segments[0].model.state_dim(),
        }
    }

    fn segment_models(&self) -> Vec<&PlantModel> {
        match &self.plant {
            PlantSetup::Single { model, .. } => vec![model],
            PlantSetup::Piecewise { segments, .. } => segments.iter().map(|s| &s.model).collect(),
        }
    }

    /// Detector per segment (Q differs across motor segments).
    pub fn build_detectors(&self, mode: EstimatorMode) -> Result<Vec<DetectorConfig>> {
        self.segment_models()
            .into_iter()
            .map(|m| match self.detector {
                DetectorSetup::Alpha(a) => DetectorConfig::from_alpha(&m.q, a, mode),
                DetectorSetup::Threshold(g) => DetectorConfig::from_threshold(&m.q, g, mode),
            })
            .collect()
    }
}

/// Draw an attack scenario from the environment's prior: an attack exists
/// with probability q and its onset is geometric with rate rho (truncated to
/// the horizon; a truncated onset means the episode stays nominal).
pub fn sample_prior_scenario(spec: &EnvSpec, rng: &mut Rng) -> AttackScenario {
    if rng.uniform() >= spec.attack_prior {
        return AttackScenario::none();
    }
    let mut onset = 1usize;
    while rng.uniform() >= spec.onset_rate {
        onset += 1;
        if onset > spec.horizon {
            return AttackScenario::none();
        }
    }
    AttackScenario::replay(onset, spec.horizon)
}

// ---------------------------------------------------------------------------
// MDP state and per-episode trace
// ---------------------------------------------------------------------------

/// Observed measurement plus detection confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpState {
    pub y: Vec<f64>,
    pub d: f64,
}

impl MdpState {
    /// Feature vector fed to the agent: scaled measurement and belief.
    pub fn features(&self, scale: f64) -> Vec<f64> {
        let mut f: Vec<f64> = self.y.iter().map(|v| v / scale).collect();
        f.push(self.d);
        f
    }
}

/// Columnar per-fast-step record of an episode.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub t: Vec<usize>,
    /// True plant output (first component).
    pub y: Vec<f64>,
    /// Detector-visible measurement (first component).
    pub y_obs: Vec<f64>,
    /// Shadow (no-watermark) output (first component).
    pub y_wom: Vec<f64>,
    /// Nominal control (first component).
    pub u: Vec<f64>,
    /// Watermark draw (first component).
    pub phi: Vec<f64>,
    /// Watermark covariance in force (scalar entry).
    pub u_cov: Vec<f64>,
    /// ||phi||_1 and ||y_wom - y||_2 per fast step.
    pub phi_l1: Vec<f64>,
    pub deviation: Vec<f64>,
    /// Detector fields; NaN / false on unprocessed steps.
    pub processed: Vec<bool>,
    pub g: Vec<f64>,
    pub alarm: Vec<bool>,
    pub d: Vec<f64>,
    pub beta: Vec<f64>,
    pub reward: Vec<f64>,
    pub attack_active: Vec<bool>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

}

/// Outcome of one decision step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: MdpState,
    pub reward: f64,
    pub done: bool,
    /// Alarms raised within the processed window of this block.
    pub alarms: usize,
}

/// Result of driving a full episode with a policy.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub trace: Trace,
    pub total_reward: f64,
    pub decision_epochs: usize,
}

// ---------------------------------------------------------------------------
// Episode runner
// ---------------------------------------------------------------------------

/// Live state of one episode. Owns its model copies and rng streams.
pub struct Episode {
    spec: EnvSpec,
    scenario: AttackScenario,
    recording: Option<RecordingBuffer>,
    detectors: Vec<DetectorConfig>,
    active_segment: usize,
    segment_rising: bool,
    segment_done: bool,
    y_true: Vec<f64>,
    y_shadow: Vec<f64>,
    y_obs: Vec<f64>,
    moments: MomentState,
    schedule: WatermarkSchedule,
    belief: BeliefState,
    belief_params: BeliefParams,
    t: usize,
    done: bool,
    rng_noise: Rng,
    rng_wm: Rng,
    rng_ctrl: Rng,
    /// Memo for the post-onset miss probability, keyed on (segment,
    /// covariance bits); it only changes when the held action changes.
    f_post_memo: Option<(usize, u64, f64)>,
    pub trace: Trace,
}

impl Episode {
    /// Set up an episode. Replay scenarios need the recording produced by a
    /// prior nominal run (`record_nominal`).
    pub fn reset(
        spec: &EnvSpec,
        scenario: AttackScenario,
        recording: Option<RecordingBuffer>,
        seed: u64,
    ) -> Result<(Episode, MdpState)> {
        scenario.validate()?;
        if spec.processed_block > spec.decision_block {
            return Err(Error::Config("processed_block must be <= decision_block".into()));
        }
        if scenario.kind == AttackKind::Replay && recording.is_none() {
            return Err(Error::Config("replay scenario needs a recording buffer".into()));
        }
        let detectors = spec.build_detectors(EstimatorMode::Compensating)?;
        let streams = Streams::new(seed);
        let mut rng_init = streams.stream("init", 0);
        let model0 = spec.segment_models()[0].clone();
        let y0 = model0.sample_initial(&mut rng_init);
        let belief_params = BeliefParams {
            attack_prior: spec.attack_prior,
            onset_rate: spec.onset_rate,
            alpha: detectors[0].alpha,
            w_beta: spec.w_beta,
        };
        let belief = BeliefState::initial(&belief_params);
        let state = MdpState { y: y0.clone(), d: belief.d };
        let first_rising = match &spec.plant {
            PlantSetup::Piecewise { segments, .. } => segments[0].switch_at >= y0[0],
            PlantSetup::Single { .. } => true,
        };
        let ep = Episode {
            spec: spec.clone(),
            scenario,
            recording,
            detectors,
            active_segment: 0,
            segment_rising: first_rising,
            segment_done: false,
            y_true: y0.clone(),
            y_shadow: y0.clone(),
            y_obs: y0,
            moments: MomentState::initial(&model0),
            schedule: WatermarkSchedule::new(None),
            belief,
            belief_params,
            t: 0,
            done: false,
            rng_noise: streams.stream("plant-noise", 0),
            rng_wm: streams.stream("watermark", 0),
            rng_ctrl: streams.stream("control", 0),
            f_post_memo: None,
            trace: Trace::default(),
        };
        Ok((ep, state))
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn fast_time(&self) -> usize {
        self.t
    }

    fn replay_active(&self, t: usize) -> bool {
        self.scenario.kind == AttackKind::Replay && self.scenario.active(t)
    }

    fn injection_active(&self, t: usize) -> bool {
        self.scenario.kind == AttackKind::Injection && self.scenario.active(t)
    }

    /// Hold one action for a decision block.
    pub fn step_decision(&mut self, action: &Matrix) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Config("episode already finished".into()));
        }
        let mut block_reward = 0.0;
        let mut alarms = 0usize;
        for i in 0..self.spec.decision_block {
            if self.done {
                break;
            }
            let processed = i < self.spec.processed_block;
            let (r, alarmed) = self.fast_step(action, processed)?;
            block_reward += r;
            alarms += alarmed as usize;
        }
        Ok(StepOutcome {
            state: MdpState { y: self.y_obs.clone(), d: self.belief.d },
            reward: block_reward,
            done: self.done,
            alarms,
        })
    }

    /// One fast step t -> t+1. Returns (reward contribution, alarm flag).
    ///
    /// Replay interception is keyed on the step index: once the adversary is
    /// active, the controller's view, the estimator's lagged reference, and
    /// the tested sample all come from the recorded stream, so the first
    /// attacked residual appears one sample after the onset and follows the
    /// post-onset replay law with no boundary artifact.
    fn fast_step(&mut self, action: &Matrix, processed: bool) -> Result<(f64, bool)> {
        let t = self.t;
        let seg = self.active_segment;
        let (model, detector) = (self.segment_models()[seg].clone(), self.detectors[seg].clone());
        let replay_now = self.replay_active(t);

        // adversary's view feeds controller and estimator alike
        let y_ctrl: Vec<f64> = if replay_now {
            let buf = self.recording.as_ref().unwrap();
            crate::attack::replay_measurement(buf, &self.scenario, t)?.to_vec()
        } else if self.injection_active(t) {
            let a = self.scenario.injection_at(t, self.y_true.len());
            crate::attack::inject_measurement(&self.y_true, &a)
        } else {
            self.y_true.clone()
        };

        // nominal control: feedback for the single plant, surrogate draw for
        // the piecewise one (the physical firmware generates pulses itself)
        let u_nominal = match &self.spec.plant {
            PlantSetup::Single { controller, .. } => control(controller, &y_ctrl)?,
            PlantSetup::Piecewise { surrogates, .. } => {
                vec![surrogates[seg].sample(&mut self.rng_ctrl)]
            }
        };

        // watermark
        let phi = self.schedule.draw(action, &mut self.rng_wm)?;

        // what actually reaches the plant
        let flip_now = matches!(self.scenario.kind, AttackKind::FlipPre | AttackKind::FlipPost)
            && self.scenario.active(t);
        let u_applied = match self.scenario.kind {
            AttackKind::FlipPre if flip_now => crate::attack::flip_control(&u_nominal, &phi, false),
            AttackKind::FlipPost if flip_now => crate::attack::flip_control(&u_nominal, &phi, true),
            _ => inject(&self.scenario.override_control(t, &u_nominal), &phi),
        };

        // an injection feeds the corrupted measurement back through the
        // loop, so the state propagates from the attacked value and the
        // residual shift persists; a replay leaves the physical state honest
        let y_base = if self.injection_active(t) { y_ctrl.clone() } else { self.y_true.clone() };

        // true plant (shared noise w), shadow plant (phi = 0, own loop)
        let w = model.sample_noise(&mut self.rng_noise);
        let y_next = step_with_noise(&model, &y_base, &u_applied, &w);

        let u_shadow_nominal = match &self.spec.plant {
            PlantSetup::Single { controller, .. } => {
                let y_ctrl_shadow = if replay_now {
                    y_ctrl.clone()
                } else if self.injection_active(t) {
                    crate::attack::inject_measurement(
                        &self.y_shadow,
                        &self.scenario.injection_at(t, self.y_shadow.len()),
                    )
                } else {
                    self.y_shadow.clone()
                };
                control(controller, &y_ctrl_shadow)?
            }
            // surrogate control is open loop: the shadow sees the same draw
            PlantSetup::Piecewise { .. } => u_nominal.clone(),
        };
        let zero_phi = vec![0.0; phi.len()];
        let u_shadow_applied = match self.scenario.kind {
            AttackKind::FlipPre if flip_now => {
                crate::attack::flip_control(&u_shadow_nominal, &zero_phi, false)
            }
            AttackKind::FlipPost if flip_now => {
                crate::attack::flip_control(&u_shadow_nominal, &zero_phi, true)
            }
            _ => self.scenario.override_control(t, &u_shadow_nominal),
        };
        let y_shadow_base = if self.injection_active(t) {
            crate::attack::inject_measurement(
                &self.y_shadow,
                &self.scenario.injection_at(t, self.y_shadow.len()),
            )
        } else {
            self.y_shadow.clone()
        };
        let y_shadow_next = step_with_noise(&model, &y_shadow_base, &u_shadow_applied, &w);

        // segment switching follows the true output; the crossing direction
        // was resolved when the segment became active
        let mut completed = false;
        if let PlantSetup::Piecewise { segments, .. } = &self.spec.plant {
            let target = segments[seg].switch_at;
            let crossed =
                if self.segment_rising { y_next[0] >= target } else { y_next[0] <= target };
            if crossed {
                if seg + 1 < segments.len() {
                    self.active_segment = seg + 1;
                    self.segment_rising = segments[seg + 1].switch_at >= y_next[0];
                } else {
                    completed = true;
                }
            }
        }

        // moments advance with the commanded control and held covariance
        self.moments = propagate_moments(&self.moments, &model, &u_nominal, action);

        // detector-visible next measurement (same interception key as above)
        let y_obs_next: Vec<f64> = if replay_now {
            let buf = self.recording.as_ref().unwrap();
            crate::attack::replay_measurement(buf, &self.scenario, t + 1)?.to_vec()
        } else if self.injection_active(t + 1) {
            let a = self.scenario.injection_at(t + 1, y_next.len());
            crate::attack::inject_measurement(&y_next, &a)
        } else {
            y_next.clone()
        };

        // detector + belief on processed samples
        let mut alarmed = false;
        let mut reward = f64::NAN;
        let mut g = f64::NAN;
        if processed {
            // the input the detector believes was applied: its own command
            // plus its own watermark normally; the recorded telemetry's
            // control during a replay on the surrogate-driven twin; and the
            // flipped signal itself under a flip (the sign inversion happens
            // upstream of the estimator's input record, which is exactly why
            // a flip is stealthy for the deployed detector)
            let believed_input: Vec<f64> = if flip_now {
                u_applied.clone()
            } else if replay_now && matches!(self.spec.plant, PlantSetup::Piecewise { .. }) {
                let rec_u = self
                    .recording
                    .as_ref()
                    .unwrap()
                    .control_at(t - self.scenario.delta_t)?
                    .to_vec();
                inject(&rec_u, &phi)
            } else {
                inject(&u_nominal, &phi)
            };
            // the estimator's lagged reference is the controller's view of
            // this step: identical to the stored observation everywhere
            // except the replay boundary, where the in-phase splice means
            // the detector's memory is already the recorded stream
            let y_hat = crate::plant::estimate(&model, &y_ctrl, &believed_input);
            let r_vec = vec_sub(&y_obs_next, &y_hat);
            g = statistic(&r_vec, &detector);
            alarmed = alarm(g, &detector);
            let beta = {
                let h = 1.0 - detector.alpha;
                // the post-onset miss depends only on (segment, held action)
                // once past the boot step; scalar actions memoize cleanly
                let memoizable = t + 1 >= 2 && action.rows() == 1;
                let key = (seg, action[(0, 0)].to_bits());
                let f_post = match self.f_post_memo {
                    Some((s, k, v)) if memoizable && (s, k) == key => v,
                    _ => {
                        let v = belief::post_onset_miss(
                            &self.schedule,
                            &model.q,
                            &model.b,
                            detector.threshold,
                            t + 1,
                        )?;
                        if memoizable {
                            self.f_post_memo = Some((key.0, key.1, v));
                        }
                        v
                    }
                };
                let f_onset = belief::onset_miss(
                    &self.schedule,
                    &self.moments,
                    &model.q,
                    &model.b,
                    detector.threshold,
                    t + 1,
                )?;
                belief::windowed_type2(
                    f_post,
                    f_onset,
                    h,
                    self.belief_params.onset_rate,
                    t + 1,
                    self.spec.w_beta,
                )
            };
            let (next_belief, _) = belief::update(&self.belief, &self.belief_params, beta, alarmed);
            self.belief = next_belief;
            reward = reward_step(&phi, &y_shadow_next, &y_next, self.belief.d, &self.spec.weights);
        }

        // trace row
        let tr = &mut self.trace;
        tr.t.push(t + 1);
        tr.y.push(y_next[0]);
        tr.y_obs.push(y_obs_next[0]);
        tr.y_wom.push(y_shadow_next[0]);
        tr.u.push(u_nominal[0]);
        tr.phi.push(phi[0]);
        tr.u_cov.push(action[(0, 0)]);
        tr.phi_l1.push(math::norm1(&phi));
        tr.deviation.push(math::norm2(&vec_sub(&y_shadow_next, &y_next)));
        tr.processed.push(processed);
        tr.g.push(g);
        tr.alarm.push(alarmed);
        tr.d.push(if processed { self.belief.d } else { f64::NAN });
        tr.beta.push(if processed { self.belief.beta } else { f64::NAN });
        tr.reward.push(reward);
        tr.attack_active.push(self.scenario.active(t));

        // advance
        self.y_true = y_next;
        self.y_shadow = y_shadow_next;
        self.y_obs = y_obs_next;
        self.t = t + 1;
        if completed {
            self.segment_done = true;
        }
        self.done = self.t >= self.spec.horizon || self.segment_done || self.replay_exhausted();
        Ok((if processed { reward } else { 0.0 }, alarmed))
    }

    /// The attacked episode cannot outlive its replay source.
    fn replay_exhausted(&self) -> bool {
        if !self.replay_active(self.t) {
            return false;
        }
        let buf = self.recording.as_ref().unwrap();
        self.t + 1 < self.scenario.delta_t
            || buf.at(self.t + 1 - self.scenario.delta_t).is_err()
    }

    fn segment_models(&self) -> Vec<&PlantModel> {
        self.spec.segment_models()
    }
}

// ---------------------------------------------------------------------------
// Policies and episode drivers
// ---------------------------------------------------------------------------

/// Maps MDP states to watermark covariances.
pub trait Policy {
    fn begin_episode(&mut self) {}
    fn act(&mut self, state: &MdpState, spec: &EnvSpec) -> f64;
}

/// No watermark.
pub struct NonePolicy;

impl Policy for NonePolicy {
    fn act(&mut self, _state: &MdpState, _spec: &EnvSpec) -> f64 {
        0.0
    }
}

/// Fixed covariance.
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn act(&mut self, _state: &MdpState, _spec: &EnvSpec) -> f64 {
        self.0
    }
}

/// Frozen actor network.
pub struct ActorPolicy<'a> {
    pub actor: &'a crate::rl::Mlp,
    pub u_max: f64,
}

impl Policy for ActorPolicy<'_> {
    fn act(&mut self, state: &MdpState, spec: &EnvSpec) -> f64 {
        let features = state.features(spec.state_scale);
        crate::rl::squash_action(self.actor.forward(&features)[0], self.u_max)
    }
}

/// Drive a full episode with a policy.
pub fn run_episode(
    spec: &EnvSpec,
    scenario: AttackScenario,
    recording: Option<RecordingBuffer>,
    policy: &mut dyn Policy,
    seed: u64,
) -> Result<EpisodeResult> {
    policy.begin_episode();
    let (mut ep, mut state) = Episode::reset(spec, scenario, recording, seed)?;
    let mut total_reward = 0.0;
    let mut epochs = 0usize;
    while !ep.done() {
        let u = policy.act(&state, spec);
        let out = ep.step_decision(&Matrix::scalar(u))?;
        total_reward += out.reward;
        state = out.state;
        epochs += 1;
    }
    Ok(EpisodeResult { trace: ep.trace, total_reward, decision_epochs: epochs })
}

/// Run one watermarked nominal episode and capture what a replay attacker
/// records: measurements, nominal controls, and the covariance schedule.
pub fn record_nominal(spec: &EnvSpec, policy: &mut dyn Policy, seed: u64) -> Result<RecordingBuffer> {
    policy.begin_episode();
    let (mut ep, mut state) = Episode::reset(spec, AttackScenario::none(), None, seed)?;
    let mut measurements = vec![ep.y_true.clone()];
    let mut controls = Vec::new();
    let mut covs = Vec::new();
    while !ep.done() {
        let u = policy.act(&state, spec);
        let out = ep.step_decision(&Matrix::scalar(u))?;
        state = out.state;
    }
    for i in 0..ep.trace.len() {
        measurements.push(vec![ep.trace.y[i]]);
        controls.push(vec![ep.trace.u[i]]);
        covs.push(ep.trace.u_cov[i]);
    }
    // align: controls[t] acts on measurements[t]; pad the final slot
    controls.push(controls.last().cloned().unwrap_or_else(|| vec![0.0]));
    covs.push(covs.last().copied().unwrap_or(0.0));
    Ok(RecordingBuffer { measurements, controls, covs, start: 0 })
}

// ---------------------------------------------------------------------------
// Identification: ARX(1,1) least squares and mixture fitting
// ---------------------------------------------------------------------------

/// Least-squares fit of y_{t+1} = A y_t + B u_t + w_t.
#[derive(Clone, Copy, Debug)]
pub struct ArxFit {
    pub a: f64,
    pub b: f64,
    /// Residual sample variance (the identified process noise).
    pub q: f64,
    pub stderr_a: f64,
    pub stderr_b: f64,
}

/// Ordinary least squares on scalar ARX(1,1) data.
pub fn fit_arx(y: &[f64], u: &[f64]) -> Result<ArxFit> {
    if y.len() != u.len() {
        return Err(Error::Dimension { context: "arx series lengths" });
    }
    if y.len() < 10 {
        return Err(Error::Config("arx fit needs at least 10 samples".into()));
    }
    let m = y.len() - 1;
    let (mut syy, mut suu, mut syu, mut sy1y, mut sy1u) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in 0..m {
        syy += y[t] * y[t];
        suu += u[t] * u[t];
        syu += y[t] * u[t];
        sy1y += y[t + 1] * y[t];
        sy1u += y[t + 1] * u[t];
    }
    let det = syy * suu - syu * syu;
    if det <= 1e-12 * syy.max(1e-300) * suu.max(1e-300) || det <= 0.0 {
        // name the offending column
        let mean_y = y[..m].iter().sum::<f64>() / m as f64;
        let mean_u = u[..m].iter().sum::<f64>() / m as f64;
        let var_y = y[..m].iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / m as f64;
        let var_u = u[..m].iter().map(|v| (v - mean_u) * (v - mean_u)).sum::<f64>() / m as f64;
        let col = if var_u <= var_y { "u" } else { "y" };
        return Err(Error::Config(alloc::format!(
            "rank-deficient arx regressor: column '{col}' is (nearly) collinear"
        )));
    }
    let a = (suu * sy1y - syu * sy1u) / det;
    let b = (syy * sy1u - syu * sy1y) / det;
    let mut rss = 0.0;
    for t in 0..m {
        let e = y[t + 1] - a * y[t] - b * u[t];
        rss += e * e;
    }
    let dof = (m.max(3) - 2) as f64;
    let q = rss / dof;
    Ok(ArxFit {
        a,
        b,
        q,
        stderr_a: math::sqrt(q * suu / det),
        stderr_b: math::sqrt(q * syy / det),
    })
}

/// EM fit of a 1-D Gaussian mixture; the component count is chosen by BIC
/// over 1..=max_components. Initialization is deterministic (quantile
/// split), convergence when the log-likelihood gain drops below 1e-8, and
/// variances are floored at 1e-10.
pub fn fit_gmm(samples: &[f64], max_components: usize) -> Result<GmmSurrogate> {
    const VAR_FLOOR: f64 = 1e-10;
    if samples.len() < 10 {
        return Err(Error::Config("gmm fit needs at least 10 samples".into()));
    }
    if max_components == 0 {
        return Err(Error::Config("gmm fit needs max_components >= 1".into()));
    }
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best: Option<(f64, GmmSurrogate)> = None;
    for k in 1..=max_components {
        // quantile-split initialization
        let mut weights = vec![1.0 / k as f64; k];
        let mut means = Vec::with_capacity(k);
        let mut vars = Vec::with_capacity(k);
        for j in 0..k {
            let lo = j * n / k;
            let hi = ((j + 1) * n / k).max(lo + 1);
            let chunk = &sorted[lo..hi];
            let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
            let v = chunk.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / chunk.len() as f64;
            means.push(m);
            vars.push(v.max(VAR_FLOOR));
        }

        let mut resp = vec![0.0; n * k];
        let mut prev_ll = f64::NEG_INFINITY;
        let mut ll = 0.0;
        for _iter in 0..500 {
            // E step with log-sum-exp
            ll = 0.0;
            for (i, &x) in samples.iter().enumerate() {
                let mut logs = vec![0.0; k];
                for j in 0..k {
                    let diff = x - means[j];
                    logs[j] = math::ln(weights[j])
                        - 0.5 * math::ln(2.0 * core::f64::consts::PI * vars[j])
                        - 0.5 * diff * diff / vars[j];
                }
                let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = logs.iter().map(|l| math::exp(l - mx)).sum();
                ll += mx + math::ln(sum_exp);
                for j in 0..k {
                    resp[i * k + j] = math::exp(logs[j] - mx) / sum_exp;
                }
            }
            // log-likelihood must not decrease (EM guarantee)
            debug_assert!(ll >= prev_ll - 1e-9, "EM log-likelihood decreased");
            if ll - prev_ll < 1e-8 && prev_ll.is_finite() {
                break;
            }
            prev_ll = ll;
            // M step
            for j in 0..k {
                let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
                let nj_safe = nj.max(1e-300);
                let mean = (0..n).map(|i| resp[i * k + j] * samples[i]).sum::<f64>() / nj_safe;
                let var = (0..n)
                    .map(|i| {
                        let d = samples[i] - mean;
                        resp[i * k + j] * d * d
                    })
                    .sum::<f64>()
                    / nj_safe;
                weights[j] = nj / n as f64;
                means[j] = mean;
                vars[j] = var.max(VAR_FLOOR);
            }
            // keep weights strictly positive and normalized
            let wsum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w = (*w / wsum).max(1e-12);
            }
            let wsum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= wsum;
            }
        }
        let p = (3 * k - 1) as f64;
        let bic = -2.0 * ll + p * math::ln(n as f64);
        let cand = GmmSurrogate::new(
            (0..k)
                .map(|j| GmmComponent { weight: weights[j], mean: means[j], variance: vars[j] })
                .collect(),
        )?;
        if best.as_ref().map_or(true, |(b, _)| bic < *b) {
            best = Some((bic, cand));
        }
    }
    Ok(best.unwrap().1)
}
