//! The three adversaries: flip, injection, and replay.
//!
//! A flip attack negates the control action, before or after the watermark is
//! injected. An injection attack adds a chosen sequence to the sensor
//! measurements. A replay attacker records measurements from a normal run
//! and feeds them back with lag `delta_t` while overriding the control.
//! Adversaries are pure functions of (scenario, buffer, t), so replays are
//! deterministic.

use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{vec_add, vec_scale, vec_sub};
use crate::Result;

/// Which adversary is active, if any.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackKind {
    None,
    /// Control negated before the watermark is added: u^A = -u + phi.
    FlipPre,
    /// Control negated after the watermark is added: u^A = -u - phi.
    FlipPost,
    /// Sensor measurements shifted by a chosen sequence a_t.
    Injection,
    /// Recorded measurements replayed with lag delta_t.
    Replay,
}

/// What the adversary does to the control path while active.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlOverride {
    /// Leave the control untouched.
    Keep,
    /// u^A = -u.
    Negate,
    /// Replace the control with a fixed sequence, indexed from the onset.
    Custom(Vec<Vec<f64>>),
}

/// Full attack scenario description.
#[derive(Clone, Debug)]
pub struct AttackScenario {
    pub kind: AttackKind,
    /// Onset time index tau (>= 1).
    pub onset: usize,
    /// Replay/override duration T_r.
    pub duration: usize,
    /// Replay lag: the replayed sample at time t is the recording at t - delta_t.
    pub delta_t: usize,
    /// Injected measurement offsets, indexed from the onset.
    pub injection_seq: Vec<Vec<f64>>,
    pub control_override: ControlOverride,
}

impl AttackScenario {
    pub fn none() -> Self {
        AttackScenario {
            kind: AttackKind::None,
            onset: usize::MAX,
            duration: 0,
            delta_t: 0,
            injection_seq: Vec::new(),
            control_override: ControlOverride::Keep,
        }
    }

    /// The replay scenario of the numerical study: full-history replay
    /// (delta_t = 0) with the controller input negated from the onset.
    pub fn replay(onset: usize, duration: usize) -> Self {
        AttackScenario {
            kind: AttackKind::Replay,
            onset,
            duration,
            delta_t: 0,
            injection_seq: Vec::new(),
            control_override: ControlOverride::Negate,
        }
    }

    pub fn flip(onset: usize, duration: usize, post: bool) -> Self {
        AttackScenario {
            kind: if post { AttackKind::FlipPost } else { AttackKind::FlipPre },
            onset,
            duration,
            delta_t: 0,
            injection_seq: Vec::new(),
            control_override: ControlOverride::Keep,
        }
    }

    pub fn injection(onset: usize, seq: Vec<Vec<f64>>) -> Self {
        let duration = seq.len();
        AttackScenario {
            kind: AttackKind::Injection,
            onset,
            duration,
            delta_t: 0,
            injection_seq: seq,
            control_override: ControlOverride::Keep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != AttackKind::None && self.onset == 0 {
            return Err(Error::Config("attack onset must be >= 1".into()));
        }
        if self.kind == AttackKind::Injection && self.injection_seq.is_empty() {
            return Err(Error::Config("injection attack needs a sequence".into()));
        }
        Ok(())
    }

    /// Whether the adversary is active at fast-time index t.
    #[inline]
    pub fn active(&self, t: usize) -> bool {
        self.kind != AttackKind::None && t >= self.onset && t <= self.onset.saturating_add(self.duration)
    }

    /// Injected offset at time t (zero outside the sequence).
    pub fn injection_at(&self, t: usize, dim: usize) -> Vec<f64> {
        if self.kind == AttackKind::Injection && self.active(t) {
            if let Some(a) = self.injection_seq.get(t - self.onset) {
                return a.clone();
            }
        }
        alloc::vec![0.0; dim]
    }

    /// Apply the control override at time t (identity when inactive).
    pub fn override_control(&self, t: usize, u: &[f64]) -> Vec<f64> {
        if !self.active(t) {
            return u.to_vec();
        }
        match &self.control_override {
            ControlOverride::Keep => u.to_vec(),
            ControlOverride::Negate => vec_scale(u, -1.0),
            ControlOverride::Custom(seq) => seq
                .get(t - self.onset)
                .cloned()
                .unwrap_or_else(|| u.to_vec()),
        }
    }
}

/// Measurements captured during normal operation, starting at index `start`.
#[derive(Clone, Debug)]
pub struct RecordingBuffer {
    pub measurements: Vec<Vec<f64>>,
    /// Recorded nominal control actions (pre-watermark), aligned with
    /// `measurements`; replayed to the detector's telemetry on setups whose
    /// control channel is also spoofed.
    pub controls: Vec<Vec<f64>>,
    /// Watermark covariances in force during the recording, aligned with
    /// `measurements`.
    pub covs: Vec<f64>,
    pub start: usize,
}

impl RecordingBuffer {
    /// Recorded measurement at absolute index t.
    pub fn at(&self, t: usize) -> Result<&[f64]> {
        t.checked_sub(self.start)
            .and_then(|i| self.measurements.get(i))
            .map(|v| v.as_slice())
            .ok_or(Error::Config(alloc::format!("recording does not cover index {t}")))
    }

    pub fn control_at(&self, t: usize) -> Result<&[f64]> {
        t.checked_sub(self.start)
            .and_then(|i| self.controls.get(i))
            .map(|v| v.as_slice())
            .ok_or(Error::Config(alloc::format!("recorded control does not cover index {t}")))
    }
}

/// Flip-attack control: pre-variant -u + phi, post-variant -u - phi.
pub fn flip_control(u: &[f64], phi: &[f64], post: bool) -> Vec<f64> {
    let neg = vec_scale(u, -1.0);
    if post {
        vec_sub(&neg, phi)
    } else {
        vec_add(&neg, phi)
    }
}

/// Injection attack on the measurement: y^A = y + a.
pub fn inject_measurement(y: &[f64], a: &[f64]) -> Vec<f64> {
    vec_add(y, a)
}

/// Replayed measurement at time t: the recording at t - delta_t.
pub fn replay_measurement<'a>(
    buf: &'a RecordingBuffer,
    scenario: &AttackScenario,
    t: usize,
) -> Result<&'a [f64]> {
    if !scenario.active(t) {
        return Err(Error::Config("replay queried outside the attack window".into()));
    }
    let src = t.checked_sub(scenario.delta_t).ok_or(Error::Config(
        "replay lag reaches before time zero".into(),
    ))?;
    buf.at(src)
}
