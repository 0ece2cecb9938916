//! Gaussian watermark generation and the analytic moment recursions.
//!
//! The watermark phi_t ~ N(0, U_t) is added to the control input. The
//! moments of the watermarked output decompose as y_t ~ N(mu_t, Z_t + W_t)
//! where Z_t is the watermark-induced covariance, W_t the noise-plus-initial
//! covariance, and Y_t = A W_{t-1} A^T the predicted-state covariance with
//! W_t = Y_t + Q. Moments are propagated recursively (O(1) per step);
//! equivalence with the explicit sums is a test, not an assumption.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::dist::gaussian_factor;
use crate::error::Error;
use crate::linalg::{vec_add, Matrix};
use crate::plant::{sample_gaussian, PlantModel};
use crate::rng::Rng;
use crate::Result;

/// Time-indexed history of watermark covariances and drawn signals.
///
/// History is retained up to a configurable horizon; entries older than the
/// horizon are dropped from the front but stay addressable by absolute index.
#[derive(Clone, Debug)]
pub struct WatermarkSchedule {
    covs: VecDeque<Matrix>,
    signals: VecDeque<Vec<f64>>,
    offset: usize,
    horizon: Option<usize>,
}

impl WatermarkSchedule {
    /// `horizon = None` keeps the full episode history.
    pub fn new(horizon: Option<usize>) -> Self {
        WatermarkSchedule { covs: VecDeque::new(), signals: VecDeque::new(), offset: 0, horizon }
    }

    /// Number of recorded draws (absolute end index).
    pub fn len(&self) -> usize {
        self.offset + self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draw phi_t ~ N(0, U) and record both U and phi.
    pub fn draw(&mut self, u: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
        if !u.is_square() {
            return Err(Error::Dimension { context: "watermark covariance" });
        }
        let factor = gaussian_factor(u).map_err(|_| Error::NotPsd { context: "watermark covariance U" })?;
        let zero = alloc::vec![0.0; u.rows()];
        let phi = sample_gaussian(&zero, &factor, rng);
        self.covs.push_back(u.clone());
        self.signals.push_back(phi.clone());
        if let Some(h) = self.horizon {
            while self.signals.len() > h {
                self.covs.pop_front();
                self.signals.pop_front();
                self.offset += 1;
            }
        }
        Ok(phi)
    }

    /// Covariance used at absolute time index t, if still retained.
    pub fn cov_at(&self, t: usize) -> Option<&Matrix> {
        t.checked_sub(self.offset).and_then(|i| self.covs.get(i))
    }

    /// Signal drawn at absolute time index t, if still retained.
    pub fn signal_at(&self, t: usize) -> Option<&[f64]> {
        t.checked_sub(self.offset).and_then(|i| self.signals.get(i)).map(|v| v.as_slice())
    }
}

/// u' = u + phi.
pub fn inject(u: &[f64], phi: &[f64]) -> Vec<f64> {
    vec_add(u, phi)
}

/// Analytic moments of the watermarked closed-loop output at time t.
#[derive(Clone, Debug)]
pub struct MomentState {
    /// Watermark-induced output covariance Z_t.
    pub z: Matrix,
    /// Noise-plus-initial covariance W_t.
    pub w: Matrix,
    /// Predicted-state covariance Y_t = A W_{t-1} A^T.
    pub y: Matrix,
    /// Deterministic mean mu_t driven by the applied control history.
    pub mu: Vec<f64>,
    pub t: usize,
}

impl MomentState {
    /// Moments at t = 0: Z = 0, W = Sigma0, mu = mu0.
    pub fn initial(model: &PlantModel) -> Self {
        let n = model.state_dim();
        MomentState {
            z: Matrix::zeros(n, n),
            w: model.sigma0.clone(),
            y: Matrix::zeros(n, n),
            mu: model.mu0.clone(),
            t: 0,
        }
    }
}

/// Advance the moment recursions one step:
/// Z' = A Z A^T + B U B^T, W' = A W A^T + Q, Y' = A W A^T, mu' = A mu + B u.
///
/// `ctrl_input` is the nominal (pre-watermark) control applied at time t.
pub fn propagate_moments(
    ms: &MomentState,
    model: &PlantModel,
    ctrl_input: &[f64],
    u_cov: &Matrix,
) -> MomentState {
    let a = &model.a;
    let b = &model.b;
    let awa = a.sandwich(&ms.w);
    let z = a.sandwich(&ms.z).add(&b.sandwich(u_cov)).symmetrize();
    let w = awa.add(&model.q).symmetrize();
    let y = awa.symmetrize();
    let mu = vec_add(&a.mul_vec(&ms.mu), &b.mul_vec(ctrl_input));
    MomentState { z, w, y, mu, t: ms.t + 1 }
}
