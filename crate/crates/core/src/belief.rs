//! Bayesian detection confidence and the windowed Type-II error.
//!
//! The confidence d_t = P(attack | alarm history) updates by Bayes' rule
//! from the alarm likelihoods under each hypothesis. Under "attack exists"
//! the likelihood mixes over the geometric onset prior: an alarm fires with
//! probability alpha before the onset and 1 - beta_t after it, where beta_t
//! sums the generalized-chi-square miss probabilities of the replay law over
//! candidate onsets inside a sliding window (the window deliberately drops
//! onset mass older than w_beta without renormalizing).

use crate::detect::{law_replay, ResidualLaw};
use crate::dist::chi2_cdf;
use crate::error::Error;
use crate::linalg::Matrix;
use crate::math;
use crate::watermark::{MomentState, WatermarkSchedule};
use crate::Result;

/// Posterior clamp so a long nominal run cannot pin the belief at 0 or 1.
pub const D_CLAMP: f64 = 1e-12;

/// Priors and detector levels the belief recursion needs.
#[derive(Clone, Copy, Debug)]
pub struct BeliefParams {
    /// Prior attack probability q: sigma ~ Bernoulli(q).
    pub attack_prior: f64,
    /// Geometric onset rate rho: tau | sigma=1 ~ Geom(rho).
    pub onset_rate: f64,
    /// Detector Type-I level.
    pub alpha: f64,
    /// Type-II window length w_beta (candidate onsets per step).
    pub w_beta: usize,
}

/// Detection confidence d_t plus the Type-II error in force at t.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefState {
    pub d: f64,
    pub beta: f64,
    pub t: usize,
}

impl BeliefState {
    /// d_0 = q, the prior-consistent start.
    pub fn initial(params: &BeliefParams) -> Self {
        BeliefState { d: params.attack_prior, beta: 1.0 - params.alpha, t: 0 }
    }
}

/// Miss probability F(threshold) of the post-onset replay law. Under the
/// detector's full-history (zero-lag) assumption the recorded segment
/// carried its own covariance schedule, so the law is Q + 2 B U_{t-1} B^T —
/// the same for every candidate onset before t, which makes this value
/// cacheable while the covariance is held constant.
pub fn post_onset_miss(
    schedule: &WatermarkSchedule,
    q: &Matrix,
    b: &Matrix,
    threshold: f64,
    t: usize,
) -> Result<f64> {
    if t < 2 {
        return chi2_cdf(threshold, q.rows());
    }
    let u_prev = schedule
        .cov_at(t - 1)
        .ok_or_else(|| Error::Config(alloc::format!("watermark history missing index {}", t - 1)))?;
    let cov = q.add(&b.sandwich(&u_prev.scale(2.0))).symmetrize();
    let law = ResidualLaw::from_moments(alloc::vec![0.0; q.rows()], cov, q)?;
    law.cdf(threshold)
}

/// Miss probability of the onset-now law (candidate onset k = t); a
/// degenerate zero-covariance law means the statistic is almost surely
/// zero, i.e. a certain miss.
pub fn onset_miss(
    schedule: &WatermarkSchedule,
    moments: &MomentState,
    q: &Matrix,
    b: &Matrix,
    threshold: f64,
    t: usize,
) -> Result<f64> {
    let u_prev = schedule
        .cov_at(t - 1)
        .ok_or_else(|| Error::Config(alloc::format!("watermark history missing index {}", t - 1)))?;
    match law_replay(t, t, moments, moments, u_prev, u_prev, q, b) {
        Ok(law) => law.cdf(threshold),
        Err(Error::NotPsd { .. }) => Ok(1.0),
        Err(e) => Err(e),
    }
}

/// Eq.-style windowed combination of the miss probabilities: onsets k in
/// [t - w_beta, t] weighted by the geometric prior (mass older than the
/// window is dropped without renormalizing), plus H(threshold) P(tau > t).
pub fn windowed_type2(
    f_post: f64,
    f_onset: f64,
    h: f64,
    onset_rate: f64,
    t: usize,
    w_beta: usize,
) -> f64 {
    if t == 0 || w_beta == 0 {
        return h;
    }
    let rho = onset_rate;
    let k_min = t.saturating_sub(w_beta).max(1);
    let mut beta = 0.0;
    for k in k_min..=t {
        let f = if k == t { f_onset } else { f_post };
        beta += f * rho * math::powi(1.0 - rho, k as i32 - 1);
    }
    beta += h * math::powi(1.0 - rho, t as i32);
    beta.clamp(0.0, 1.0)
}

/// Windowed Type-II error beta_t of the replay detector.
#[allow(clippy::too_many_arguments)]
pub fn type2_error(
    schedule: &WatermarkSchedule,
    moments: &MomentState,
    q: &Matrix,
    b: &Matrix,
    threshold: f64,
    onset_rate: f64,
    t: usize,
    w_beta: usize,
) -> Result<f64> {
    let h = chi2_cdf(threshold, q.rows())?;
    if t == 0 || w_beta == 0 {
        return Ok(h);
    }
    let f_post = post_onset_miss(schedule, q, b, threshold, t)?;
    let f_onset = onset_miss(schedule, moments, q, b, threshold, t)?;
    Ok(windowed_type2(f_post, f_onset, h, onset_rate, t, w_beta))
}

/// Alarm likelihood pair (p(I | sigma=1), p(I | sigma=0)).
pub fn likelihoods(alarm: bool, alpha: f64, beta_t: f64, onset_rate: f64, t: usize) -> (f64, f64) {
    let p0 = if alarm { alpha } else { 1.0 - alpha };
    let p_started = 1.0 - math::powi(1.0 - onset_rate, t as i32);
    let attacked_branch = if alarm { 1.0 - beta_t } else { beta_t };
    let p1 = attacked_branch * p_started + p0 * (1.0 - p_started);
    (p1, p0)
}

/// Bayes posterior kernel d' = d p1 / (d p1 + (1 - d) p0).
pub fn posterior(d: f64, p1: f64, p0: f64) -> Option<f64> {
    let denom = d * p1 + (1.0 - d) * p0;
    if !(denom > 0.0) || !denom.is_finite() {
        return None;
    }
    Some((d * p1 / denom).clamp(D_CLAMP, 1.0 - D_CLAMP))
}

/// Advance the belief one processed sample.
///
/// `beta_next` must be the Type-II error computed for the incoming step.
/// Returns the new state and a flag set when both likelihoods vanished and
/// the posterior was left unchanged.
pub fn update(
    bs: &BeliefState,
    params: &BeliefParams,
    beta_next: f64,
    alarm: bool,
) -> (BeliefState, bool) {
    let t_next = bs.t + 1;
    let (p1, p0) = likelihoods(alarm, params.alpha, beta_next, params.onset_rate, t_next);
    match posterior(bs.d, p1, p0) {
        Some(d) => (BeliefState { d, beta: beta_next, t: t_next }, false),
        None => (BeliefState { d: bs.d, beta: beta_next, t: t_next }, true),
    }
}
