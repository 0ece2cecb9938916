//! Chi-square residual detector and the analytic residual laws under attack.
//!
//! The test statistic is the Mahalanobis norm g = r^T Q^-1 r, chi-square
//! with n dof under nominal operation. Each attack variant has an analytic
//! residual law (predict-then-verify oracles): noncentral chi-square for the
//! flip attacks and watermark-ignorant estimation, generalized chi-square
//! for replay.
//!
//! The estimator mode makes explicit which information the detector's
//! one-step predictor uses; the theorems assume different predictors, and an
//! explicit mode is the only way they are all simultaneously testable.

use alloc::vec::Vec;

use crate::dist::{chi2_cdf, chi2_quantile, gx2_cdf, gx2_from_residual_law, noncentral_chi2_cdf, Gx2Params};
use crate::error::Error;
use crate::linalg::{quad_form, vec_add, vec_scale, vec_sub, Matrix};
use crate::math;
use crate::plant::PlantModel;
use crate::watermark::MomentState;
use crate::Result;

/// Which information the detector's one-step predictor uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorMode {
    /// y_hat = A y + B (u + phi): the deployed, watermark-compensating form.
    Compensating,
    /// y_hat = A y + B u: the watermark is known but not used for estimation.
    Noncompensating,
    /// y_hat = A y + B (-u + phi): the predictor tracks the flipped control
    /// and still compensates the watermark.
    FrozenFlip,
    /// y_hat = A y + B u with the nominal (pre-attack) control only.
    ModelOnly,
}

/// Detector configuration: cached Q^-1, threshold, and Type-I level.
#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub q: Matrix,
    pub q_inv: Matrix,
    pub threshold: f64,
    pub alpha: f64,
    pub mode: EstimatorMode,
}

fn invert_with_ridge(q: &Matrix) -> Result<Matrix> {
    if let Ok(inv) = q.inverse() {
        if inv.as_slice().iter().all(|x| x.is_finite()) {
            return Ok(inv);
        }
    }
    let n = q.rows();
    let ridge = 1e-15 * q.trace() / n as f64;
    let reg = q.add(&Matrix::identity(n).scale(ridge));
    reg.inverse()
        .map_err(|_| Error::Singular { context: "detector Q inverse (after ridge)" })
}

impl DetectorConfig {
    /// Analytic calibration: threshold at the (1 - alpha) chi-square quantile.
    pub fn from_alpha(q: &Matrix, alpha: f64, mode: EstimatorMode) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Domain { context: "detector alpha outside (0,1)" });
        }
        let threshold = chi2_quantile(1.0 - alpha, q.rows())?;
        Ok(DetectorConfig { q: q.clone(), q_inv: invert_with_ridge(q)?, threshold, alpha, mode })
    }

    /// Explicit threshold (e.g. an empirically tuned value); alpha is derived
    /// as the nominal exceedance probability of that threshold.
    pub fn from_threshold(q: &Matrix, threshold: f64, mode: EstimatorMode) -> Result<Self> {
        if threshold <= 0.0 {
            return Err(Error::Domain { context: "detector threshold must be positive" });
        }
        let alpha = 1.0 - chi2_cdf(threshold, q.rows())?;
        Ok(DetectorConfig { q: q.clone(), q_inv: invert_with_ridge(q)?, threshold, alpha, mode })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.q.rows()
    }
}

/// g = r^T Q^-1 r.
#[inline]
pub fn statistic(r: &[f64], cfg: &DetectorConfig) -> f64 {
    quad_form(&cfg.q_inv, r)
}

/// Alarm flag I = 1 iff g > threshold (strictly).
#[inline]
pub fn alarm(g: f64, cfg: &DetectorConfig) -> bool {
    g > cfg.threshold
}

/// Threshold calibration mode.
pub enum Calibration<'a> {
    Analytic,
    /// (1 - alpha) sample quantile of an observed nominal statistic trace.
    Empirical(&'a [f64]),
}

/// Calibrate the alarm threshold for a Type-I level `alpha`.
pub fn calibrate_threshold(alpha: f64, n: usize, mode: Calibration<'_>) -> Result<f64> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Domain { context: "calibrate_threshold: alpha outside (0,1)" });
    }
    match mode {
        Calibration::Analytic => chi2_quantile(1.0 - alpha, n),
        Calibration::Empirical(trace) => {
            if trace.is_empty() {
                return Err(Error::Config("empirical calibration needs a nominal trace".into()));
            }
            let mut sorted: Vec<f64> = trace.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // nearest-rank (1 - alpha) quantile
            let k = math::ceil((1.0 - alpha) * sorted.len() as f64) as usize;
            Ok(sorted[k.clamp(1, sorted.len()) - 1])
        }
    }
}

/// One-step prediction under the given estimator mode.
///
/// `u_nominal` is the controller output before watermark or attack;
/// `phi` is the watermark drawn at the same step.
pub fn predict(
    mode: EstimatorMode,
    model: &PlantModel,
    y_prev: &[f64],
    u_nominal: &[f64],
    phi: &[f64],
) -> Vec<f64> {
    let believed_input = match mode {
        EstimatorMode::Compensating => vec_add(u_nominal, phi),
        EstimatorMode::Noncompensating | EstimatorMode::ModelOnly => u_nominal.to_vec(),
        EstimatorMode::FrozenFlip => vec_add(&vec_scale(u_nominal, -1.0), phi),
    };
    let mut out = model.a.mul_vec(y_prev);
    let bu = model.b.mul_vec(&believed_input);
    for i in 0..out.len() {
        out[i] += bu[i];
    }
    out
}

// ---------------------------------------------------------------------------
// Residual laws
// ---------------------------------------------------------------------------

/// Distribution family of the test statistic implied by a residual law.
#[derive(Clone, Debug)]
pub enum LawFamily {
    CentralChi2 { dof: usize },
    NoncentralChi2 {
        dof: usize,
        /// Mahalanobis noncentrality m^T Q^-1 m; this is what the statistic
        /// g = r^T Q^-1 r actually follows and what `cdf` evaluates.
        lambda: f64,
        /// The unweighted m^T m form the flip/known-watermark theorems state;
        /// kept as the documented alternate, not used for probabilities.
        lambda_stated: f64,
    },
    GeneralizedChi2(Gx2Params),
}

/// Gaussian residual law r ~ N(mean, cov) and the implied statistic family.
#[derive(Clone, Debug)]
pub struct ResidualLaw {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub family: LawFamily,
}

impl ResidualLaw {
    /// Classify the law from its moments: cov = Q and zero mean gives the
    /// central family, cov = Q with a mean the noncentral one, anything else
    /// the generalized chi-square via the spectral mapping.
    pub fn from_moments(mean: Vec<f64>, cov: Matrix, q: &Matrix) -> Result<Self> {
        let n = q.rows();
        if mean.len() != n || cov.rows() != n {
            return Err(Error::Dimension { context: "residual law moments" });
        }
        let scale = q.max_abs().max(1e-300);
        let cov_is_q = cov.sub(q).max_abs() <= 1e-9 * scale;
        let mean_norm2: f64 = mean.iter().map(|x| x * x).sum();
        let family = if cov_is_q {
            if mean_norm2 == 0.0 {
                LawFamily::CentralChi2 { dof: n }
            } else {
                let q_inv = invert_with_ridge(q)?;
                LawFamily::NoncentralChi2 {
                    dof: n,
                    lambda: quad_form(&q_inv, &mean),
                    lambda_stated: mean_norm2,
                }
            }
        } else {
            LawFamily::GeneralizedChi2(gx2_from_residual_law(&mean, &cov, q)?)
        };
        Ok(ResidualLaw { mean, cov, family })
    }

    /// CDF of the test statistic under this law.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        match &self.family {
            LawFamily::CentralChi2 { dof } => chi2_cdf(x, *dof),
            LawFamily::NoncentralChi2 { dof, lambda, .. } => noncentral_chi2_cdf(x, *dof, *lambda),
            LawFamily::GeneralizedChi2(p) => Ok(gx2_cdf(p, x).value),
        }
    }
}

/// Lemma law for known-but-uncompensated watermarks: with the
/// non-compensating estimator the residual is N(B phi, Q), so g is
/// noncentral chi-square with stated noncentrality phi^T B^T B phi.
pub fn law_nominal_known_wm(cfg: &DetectorConfig, phi_prev: &[f64], b: &Matrix) -> Result<ResidualLaw> {
    if cfg.mode != EstimatorMode::Noncompensating {
        return Err(Error::Config(
            "known-watermark law requires the noncompensating estimator mode".into(),
        ));
    }
    let mean = b.mul_vec(phi_prev);
    ResidualLaw::from_moments(mean, cfg.q.clone(), &cfg.q)
}

/// Flip-attack law variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipLaw {
    /// Post-watermark flip with the frozen-flip estimator: mean -2 B phi.
    Thm1,
    /// Pre-watermark flip with the model-only estimator: mean -2 B u + B phi.
    Thm2Pre,
    /// Post-watermark flip with the model-only estimator: mean -2 B u - B phi.
    Thm2Post,
}

/// Analytic residual law under a flip attack.
pub fn law_flip(
    cfg: &DetectorConfig,
    variant: FlipLaw,
    u_prev: &[f64],
    phi_prev: &[f64],
    b: &Matrix,
) -> Result<ResidualLaw> {
    let mode_ok = match variant {
        FlipLaw::Thm1 => cfg.mode == EstimatorMode::FrozenFlip,
        FlipLaw::Thm2Pre | FlipLaw::Thm2Post => cfg.mode == EstimatorMode::ModelOnly,
    };
    if !mode_ok {
        return Err(Error::Config("flip-law variant does not match the estimator mode".into()));
    }
    let b_phi = b.mul_vec(phi_prev);
    let mean = match variant {
        FlipLaw::Thm1 => vec_scale(&b_phi, -2.0),
        FlipLaw::Thm2Pre => vec_add(&vec_scale(&b.mul_vec(u_prev), -2.0), &b_phi),
        FlipLaw::Thm2Post => vec_sub(&vec_scale(&b.mul_vec(u_prev), -2.0), &b_phi),
    };
    ResidualLaw::from_moments(mean, cfg.q.clone(), &cfg.q)
}

/// Analytic residual law under a replay attack.
///
/// At the onset (t == tau): mean mu_{t1} - mu_tau and covariance
/// W_{t1} + Z_{t1} + Y_tau + Z_tau. Past the onset (t > tau): zero mean and
/// covariance Q + B (U_rec + U_live) B^T, where U_rec is the watermark
/// covariance in force in the recorded segment at t - delta_t - 1 and
/// U_live the one at t - 1.
#[allow(clippy::too_many_arguments)]
pub fn law_replay(
    t: usize,
    onset: usize,
    moments_t1: &MomentState,
    moments_tau: &MomentState,
    u_rec_prev: &Matrix,
    u_live_prev: &Matrix,
    q: &Matrix,
    b: &Matrix,
) -> Result<ResidualLaw> {
    if t < onset {
        return Err(Error::Config("replay law queried before the onset".into()));
    }
    if t == onset {
        let mean = vec_sub(&moments_t1.mu, &moments_tau.mu);
        let cov = moments_t1
            .w
            .add(&moments_t1.z)
            .add(&moments_tau.y)
            .add(&moments_tau.z)
            .symmetrize();
        ResidualLaw::from_moments(mean, cov, q)
    } else {
        let cov = q.add(&b.sandwich(&u_rec_prev.add(u_live_prev))).symmetrize();
        let mean = alloc::vec![0.0; q.rows()];
        ResidualLaw::from_moments(mean, cov, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantModel;
    use alloc::vec;

    fn dt_cfg(mode: EstimatorMode) -> DetectorConfig {
        DetectorConfig::from_alpha(&Matrix::scalar(1.3741e-13), 0.005, mode).unwrap()
    }

    #[test]
    fn statistic_zero_and_normalized() {
        let cfg = dt_cfg(EstimatorMode::Compensating);
        assert_eq!(statistic(&[0.0], &cfg), 0.0);
        let q = 0.37;
        let cfg = DetectorConfig::from_alpha(&Matrix::scalar(q), 0.005, EstimatorMode::Compensating)
            .unwrap();
        let g = statistic(&[math::sqrt(q)], &cfg);
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alarm_boundary_is_strict() {
        let cfg = dt_cfg(EstimatorMode::Compensating);
        assert!(!alarm(cfg.threshold, &cfg));
        assert!(alarm(cfg.threshold + 1e-9, &cfg));
        assert!(!alarm(0.0, &cfg));
    }

    #[test]
    fn analytic_thresholds() {
        let g = calibrate_threshold(0.005, 1, Calibration::Analytic).unwrap();
        assert!((g - 7.879).abs() < 1e-3);
        let g = calibrate_threshold(0.10, 1, Calibration::Analytic).unwrap();
        assert!((g - 2.706).abs() < 1e-3);
    }

    #[test]
    fn empirical_threshold_converges_to_analytic() {
        // exact chi2_1 samples via squared normals
        let mut rng = crate::rng::Streams::new(21).stream("emp", 0);
        let n = 100_000;
        let trace: Vec<f64> = (0..n)
            .map(|_| {
                let z = rng.standard_normal();
                z * z
            })
            .collect();
        let emp = calibrate_threshold(0.005, 1, Calibration::Empirical(&trace)).unwrap();
        let ana = calibrate_threshold(0.005, 1, Calibration::Analytic).unwrap();
        assert!((emp / ana - 1.0).abs() < 0.03, "emp={emp} ana={ana}");
        assert!(calibrate_threshold(0.005, 1, Calibration::Empirical(&[])).is_err());
    }

    #[test]
    fn known_watermark_law_reductions_and_hand_value() {
        let cfg = dt_cfg(EstimatorMode::Noncompensating);
        let b = Matrix::scalar(0.010);
        // phi = 0 -> central
        let law = law_nominal_known_wm(&cfg, &[0.0], &b).unwrap();
        assert!(matches!(law.family, LawFamily::CentralChi2 { dof: 1 }));
        // phi = 1 -> stated lambda = phi^T B^T B phi = 1e-4
        let law = law_nominal_known_wm(&cfg, &[1.0], &b).unwrap();
        match law.family {
            LawFamily::NoncentralChi2 { lambda, lambda_stated, .. } => {
                assert!((lambda_stated - 1e-4).abs() < 1e-12);
                // the Mahalanobis form divides by Q
                assert!((lambda - 1e-4 / 1.3741e-13).abs() / lambda < 1e-9);
            }
            other => panic!("wrong family {other:?}"),
        }
        // wrong estimator mode is a configuration error
        let cfg = dt_cfg(EstimatorMode::Compensating);
        assert!(law_nominal_known_wm(&cfg, &[1.0], &b).is_err());
    }

    #[test]
    fn flip_law_hand_values() {
        let b = Matrix::scalar(0.010);
        let cfg = dt_cfg(EstimatorMode::FrozenFlip);
        // phi = 0 -> flip invisible without watermark
        let law = law_flip(&cfg, FlipLaw::Thm1, &[1.0], &[0.0], &b).unwrap();
        assert!(matches!(law.family, LawFamily::CentralChi2 { .. }));
        // phi = 1 -> mean -2 B phi, stated lambda 4 phi^T B^T B phi = 4e-4
        let law = law_flip(&cfg, FlipLaw::Thm1, &[1.0], &[1.0], &b).unwrap();
        assert!((law.mean[0] + 0.020).abs() < 1e-15);
        match law.family {
            LawFamily::NoncentralChi2 { lambda_stated, .. } => {
                assert!((lambda_stated - 4e-4).abs() < 1e-12)
            }
            other => panic!("wrong family {other:?}"),
        }
        // Thm2 pre-variant mean: -2Bu + B phi = -0.020 + 0.005
        let cfg = dt_cfg(EstimatorMode::ModelOnly);
        let law = law_flip(&cfg, FlipLaw::Thm2Pre, &[1.0], &[0.5], &b).unwrap();
        assert!((law.mean[0] + 0.015).abs() < 1e-15);
        let law = law_flip(&cfg, FlipLaw::Thm2Post, &[1.0], &[0.5], &b).unwrap();
        assert!((law.mean[0] + 0.025).abs() < 1e-15);
        // variant/mode mismatch
        assert!(law_flip(&cfg, FlipLaw::Thm1, &[1.0], &[0.5], &b).is_err());
        let cfg = dt_cfg(EstimatorMode::FrozenFlip);
        assert!(law_flip(&cfg, FlipLaw::Thm2Pre, &[1.0], &[0.5], &b).is_err());
    }

    #[test]
    fn replay_law_reduction_and_scalar_hand_value() {
        let q = Matrix::scalar(1.3741e-13);
        let b = Matrix::scalar(0.010);
        let model = PlantModel::scalar(1.0, 0.010, 1.3741e-13, 0.0, 0.0).unwrap();
        let ms = crate::watermark::MomentState::initial(&model);
        // U = 0 on both sides -> post-onset covariance Q: central chi-square
        let law = law_replay(5, 2, &ms, &ms, &Matrix::scalar(0.0), &Matrix::scalar(0.0), &q, &b)
            .unwrap();
        assert!(matches!(law.family, LawFamily::CentralChi2 { .. }));
        // U = 2.5e-3 on both sides -> S ~= 5.0000e-7 (Q negligible)
        let u = Matrix::scalar(2.5e-3);
        let law = law_replay(5, 2, &ms, &ms, &u, &u, &q, &b).unwrap();
        assert!((law.cov[(0, 0)] - (1.3741e-13 + 2.0 * 1e-4 * 2.5e-3)).abs() < 1e-18);
        assert!((law.cov[(0, 0)] - 5.0000e-7).abs() < 1e-9);
        match &law.family {
            LawFamily::GeneralizedChi2(p) => {
                assert_eq!(p.terms(), 1);
                assert!((p.weights[0] - law.cov[(0, 0)] / 1.3741e-13).abs() / p.weights[0] < 1e-9);
            }
            other => panic!("wrong family {other:?}"),
        }
        // querying before the onset is a configuration error
        assert!(law_replay(1, 2, &ms, &ms, &u, &u, &q, &b).is_err());
    }

    #[test]
    fn ridge_regularizes_near_singular_q() {
        let q = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-16]]);
        let cfg = DetectorConfig::from_alpha(&q, 0.05, EstimatorMode::Compensating);
        assert!(cfg.is_ok());
        assert!(cfg.unwrap().q_inv.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn statistic_invariant_under_rotation_for_isotropic_q() {
        // Q = qI commutes with any rotation
        let q = Matrix::identity(2).scale(0.5);
        let cfg = DetectorConfig::from_alpha(&q, 0.05, EstimatorMode::Compensating).unwrap();
        let theta: f64 = 0.77;
        let rot = Matrix::from_rows(&[
            &[math::cos(theta), -math::sin(theta)],
            &[math::sin(theta), math::cos(theta)],
        ]);
        let r = vec![0.3, -0.9];
        let rr = rot.mul_vec(&r);
        assert!((statistic(&r, &cfg) - statistic(&rr, &cfg)).abs() < 1e-12);
    }
}
