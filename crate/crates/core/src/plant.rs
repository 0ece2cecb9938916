//! Stochastic linear plant, proportional controller, one-step estimator, and
//! the piecewise-linear variant used by the stepper-motor twin.
//!
//! Dynamics: y_{t+1} = A y_t + B u'_t + w_t with w_t ~ N(0, Q) and
//! y_0 ~ N(mu0, Sigma0). The estimator predicts from the previous
//! measurement and the applied (watermark-bearing) input, so nominal
//! residuals are i.i.d. N(0, Q).

use alloc::vec::Vec;

use crate::dist::{gaussian_factor, symmetric_eig, PSD_TOL};
use crate::error::Error;
use crate::linalg::{vec_sub, Matrix};
use crate::rng::Rng;
use crate::Result;

/// State matrices and noise law of the plant.
#[derive(Clone, Debug)]
pub struct PlantModel {
    pub a: Matrix,
    pub b: Matrix,
    pub q: Matrix,
    pub mu0: Vec<f64>,
    pub sigma0: Matrix,
    noise_factor: Matrix,
    init_factor: Matrix,
}

fn check_psd(m: &Matrix, context: &'static str) -> Result<()> {
    let eig = symmetric_eig(m);
    let max = eig.lambda.iter().fold(0.0f64, |acc, l| acc.max(*l));
    let floor = -PSD_TOL * max.max(1.0);
    if eig.lambda.iter().any(|l| *l < floor) {
        return Err(Error::NotPsd { context });
    }
    Ok(())
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix, q: Matrix, mu0: Vec<f64>, sigma0: Matrix) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n || q.rows() != n || !q.is_square() {
            return Err(Error::Dimension { context: "plant matrices" });
        }
        if mu0.len() != n || sigma0.rows() != n || !sigma0.is_square() {
            return Err(Error::Dimension { context: "plant initial condition" });
        }
        let q = q.symmetrize();
        let sigma0 = sigma0.symmetrize();
        check_psd(&q, "process noise Q")?;
        check_psd(&sigma0, "initial covariance Sigma0")?;
        let noise_factor = gaussian_factor(&q)?;
        let init_factor = gaussian_factor(&sigma0)?;
        Ok(PlantModel { a, b, q, mu0, sigma0, noise_factor, init_factor })
    }

    /// Scalar model, the shape both twins use.
    pub fn scalar(a: f64, b: f64, q: f64, mu0: f64, sigma0: f64) -> Result<Self> {
        PlantModel::new(
            Matrix::scalar(a),
            Matrix::scalar(b),
            Matrix::scalar(q),
            alloc::vec![mu0],
            Matrix::scalar(sigma0),
        )
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    #[inline]
    pub fn control_dim(&self) -> usize {
        self.b.cols()
    }

    /// Draw y_0 ~ N(mu0, Sigma0).
    pub fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        sample_gaussian(&self.mu0, &self.init_factor, rng)
    }

    /// Draw w ~ N(0, Q).
    pub fn sample_noise(&self, rng: &mut Rng) -> Vec<f64> {
        let zero = alloc::vec![0.0; self.state_dim()];
        sample_gaussian(&zero, &self.noise_factor, rng)
    }
}

/// mu + L z with z standard normal.
pub(crate) fn sample_gaussian(mu: &[f64], factor: &Matrix, rng: &mut Rng) -> Vec<f64> {
    let n = mu.len();
    let z: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    let mut out = factor.mul_vec(&z);
    for i in 0..n {
        out[i] += mu[i];
    }
    out
}

/// Proportional controller u = Kp (setpoint - y).
#[derive(Clone, Debug)]
pub struct Controller {
    pub kp: Matrix,
    pub setpoint: Vec<f64>,
}

impl Controller {
    pub fn new(kp: Matrix, setpoint: Vec<f64>) -> Result<Self> {
        if kp.cols() != setpoint.len() {
            return Err(Error::Dimension { context: "controller gain vs setpoint" });
        }
        Ok(Controller { kp, setpoint })
    }

    pub fn scalar(kp: f64, setpoint: f64) -> Self {
        Controller { kp: Matrix::scalar(kp), setpoint: alloc::vec![setpoint] }
    }
}

/// u = Kp (setpoint - y).
pub fn control(ctrl: &Controller, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != ctrl.setpoint.len() {
        return Err(Error::Dimension { context: "control input" });
    }
    Ok(ctrl.kp.mul_vec(&vec_sub(&ctrl.setpoint, y)))
}

/// Latest measurement plus its time index.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub y: Vec<f64>,
    pub t: usize,
}

/// One simulation step. Returns (y_next, w) so a shadow trajectory can reuse
/// the same noise realization.
pub fn step(model: &PlantModel, y: &[f64], u_applied: &[f64], rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(y.len(), model.state_dim());
    debug_assert_eq!(u_applied.len(), model.control_dim());
    let w = model.sample_noise(rng);
    let y_next = step_with_noise(model, y, u_applied, &w);
    (y_next, w)
}

/// Deterministic transition given a noise realization.
pub fn step_with_noise(model: &PlantModel, y: &[f64], u_applied: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = model.a.mul_vec(y);
    let bu = model.b.mul_vec(u_applied);
    for i in 0..out.len() {
        out[i] += bu[i] + w[i];
    }
    out
}

/// One-step prediction y_hat_t = A y_{t-1} + B u'_{t-1}, where u' is the
/// applied input (watermark included, so the estimator compensates for it).
pub fn estimate(model: &PlantModel, y_prev: &[f64], u_applied_prev: &[f64]) -> Vec<f64> {
    let mut out = model.a.mul_vec(y_prev);
    let bu = model.b.mul_vec(u_applied_prev);
    for i in 0..out.len() {
        out[i] += bu[i];
    }
    out
}

/// r = y - y_hat.
pub fn residual(y: &[f64], y_hat: &[f64]) -> Vec<f64> {
    vec_sub(y, y_hat)
}

// ---------------------------------------------------------------------------
// Piecewise-linear plant
// ---------------------------------------------------------------------------

/// One operating segment: local linear model, local controller, and the
/// scalar setpoint whose first crossing hands over to the next segment.
#[derive(Clone, Debug)]
pub struct Segment {
    pub model: PlantModel,
    pub controller: Controller,
    pub switch_at: f64,
}

/// Crossing direction, resolved on segment entry from the current output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Rising,
    Falling,
}

/// Piecewise-linear plant switching segments at setpoint crossings.
#[derive(Clone, Debug)]
pub struct PiecewiseModel {
    pub segments: Vec<Segment>,
    active: usize,
    direction: Option<Direction>,
    completed: bool,
}

/// What a piecewise step did besides stepping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentEvent {
    None,
    /// The active segment's setpoint was crossed; the next segment is live.
    Switched,
    /// The final segment's setpoint was crossed; the episode is over.
    Completed,
}

impl PiecewiseModel {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("piecewise model needs at least one segment".into()));
        }
        if segments.iter().any(|s| s.model.state_dim() != 1) {
            return Err(Error::Config("piecewise switching requires scalar output".into()));
        }
        Ok(PiecewiseModel { segments, active: 0, direction: None, completed: false })
    }

    pub fn active_index(&self) -> usize {
        self.active
    }

    pub fn active_segment(&self) -> &Segment {
        &self.segments[self.active]
    }

    pub fn is_completed(&self) -> bool {
        self.completed
    }

    fn resolve_direction(&mut self, y: f64) {
        let target = self.segments[self.active].switch_at;
        self.direction = Some(if target >= y { Direction::Rising } else { Direction::Falling });
    }

    fn crossed(&self, y: f64) -> bool {
        let target = self.segments[self.active].switch_at;
        match self.direction {
            Some(Direction::Rising) => y >= target,
            Some(Direction::Falling) => y <= target,
            None => false,
        }
    }
}

/// Step with the active segment; advance the segment on the first crossing
/// of its setpoint in the direction of motion.
pub fn piecewise_step(
    pw: &mut PiecewiseModel,
    y: &[f64],
    u_applied: &[f64],
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>, SegmentEvent)> {
    if pw.completed {
        return Err(Error::Config("piecewise model already completed".into()));
    }
    if pw.direction.is_none() {
        pw.resolve_direction(y[0]);
    }
    let (y_next, w) = step(&pw.segments[pw.active].model, y, u_applied, rng);
    let mut event = SegmentEvent::None;
    if pw.crossed(y_next[0]) {
        if pw.active + 1 < pw.segments.len() {
            pw.active += 1;
            pw.resolve_direction(y_next[0]);
            event = SegmentEvent::Switched;
        } else {
            pw.completed = true;
            event = SegmentEvent::Completed;
        }
    }
    Ok((y_next, w, event))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use alloc::vec;

    fn dt_model() -> PlantModel {
        // machine-tool digital-twin parameters
        PlantModel::scalar(1.0, 0.010, 1.3741e-13, 0.0, 0.0).unwrap()
    }

    #[test]
    fn control_law_values() {
        let ctrl = Controller::scalar(1.0, 0.012);
        assert!((control(&ctrl, &[0.0]).unwrap()[0] - 0.012).abs() < 1e-15);
        assert_eq!(control(&ctrl, &[0.012]).unwrap()[0], 0.0);
        let zero_gain = Controller::scalar(0.0, 0.012);
        assert_eq!(control(&zero_gain, &[123.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn control_dimension_mismatch_is_config_error() {
        let ctrl = Controller::scalar(1.0, 0.012);
        assert!(control(&ctrl, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn step_arithmetic_with_zero_noise() {
        // Q = 0 forces w = 0
        let m = PlantModel::scalar(1.0, 0.010, 0.0, 0.0, 0.0).unwrap();
        let mut rng = Streams::new(1).stream("plant", 0);
        let (y1, w) = step(&m, &[0.0], &[1.0], &mut rng);
        assert_eq!(w[0], 0.0);
        assert!((y1[0] - 0.010).abs() < 1e-15);
        // identity dynamics
        let (y2, _) = step(&m, &[0.7], &[0.0], &mut rng);
        assert_eq!(y2[0], 0.7);
    }

    #[test]
    fn step_noise_variance_matches_q() {
        let m = dt_model();
        let mut rng = Streams::new(2).stream("plant", 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (y1, _) = step(&m, &[0.5], &[0.25], &mut rng);
            let w = y1[0] - 0.5 - 0.010 * 0.25;
            sum += w;
            sumsq += w * w;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((var / 1.3741e-13 - 1.0).abs() < 0.02, "var ratio {}", var / 1.3741e-13);
    }

    #[test]
    fn estimator_is_exact_without_noise() {
        let m = PlantModel::scalar(0.98, 0.010, 0.0, 0.0, 0.0).unwrap();
        let mut rng = Streams::new(3).stream("plant", 0);
        let mut y = vec![0.3];
        for _ in 0..50 {
            let u = vec![0.2];
            let (y_next, _) = step(&m, &y, &u, &mut rng);
            let y_hat = estimate(&m, &y, &u);
            assert!((y_next[0] - y_hat[0]).abs() < 1e-15);
            y = y_next;
        }
        // hand value
        let e = estimate(&dt_model(), &[0.5], &[0.2]);
        assert!((e[0] - 0.502).abs() < 1e-15);
    }

    #[test]
    fn residual_covariance_matches_q() {
        let m = dt_model();
        let ctrl = Controller::scalar(1.0, 0.012);
        let mut rng = Streams::new(4).stream("plant", 0);
        let mut y = m.sample_initial(&mut rng);
        let mut sumsq = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let u = control(&ctrl, &y).unwrap();
            let (y_next, _) = step(&m, &y, &u, &mut rng);
            let r = residual(&y_next, &estimate(&m, &y, &u));
            sumsq += r[0] * r[0];
            y = y_next;
        }
        let var = sumsq / n as f64;
        assert!((var / 1.3741e-13 - 1.0).abs() < 0.03, "var ratio {}", var / 1.3741e-13);
    }

    #[test]
    fn residual_antisymmetry() {
        let a = vec![1.0, -0.5];
        let b = vec![0.4, 0.2];
        let r1 = residual(&a, &b);
        let r2 = residual(&b, &a);
        for (x, y) in r1.iter().zip(&r2) {
            assert_eq!(*x, -*y);
        }
        assert_eq!(residual(&[1.0], &[0.4])[0], 0.6);
        assert_eq!(residual(&[0.7], &[0.7])[0], 0.0);
    }

    #[test]
    fn sampled_noise_mean_is_centered() {
        let m = PlantModel::scalar(1.0, 1.0, 2.5, 0.0, 0.0).unwrap();
        let mut rng = Streams::new(5).stream("plant", 0);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += m.sample_noise(&mut rng)[0];
        }
        let mean = sum / n as f64;
        let bound = 4.0 * (2.5f64).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < bound, "mean={mean} bound={bound}");
    }

    #[test]
    fn deterministic_given_seed() {
        let m = dt_model();
        let run = |seed: u64| {
            let mut rng = Streams::new(seed).stream("plant", 0);
            let mut y = vec![0.0];
            let mut trace = Vec::new();
            for _ in 0..100 {
                let (y_next, w) = step(&m, &y, &[0.01], &mut rng);
                trace.push((y_next[0].to_bits(), w[0].to_bits()));
                y = y_next;
            }
            trace
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn zero_initial_covariance_is_deterministic() {
        let m = dt_model();
        let mut rng = Streams::new(6).stream("init", 0);
        for _ in 0..10 {
            assert_eq!(m.sample_initial(&mut rng), vec![0.0]);
        }
    }

    #[test]
    fn non_psd_q_rejected_at_construction() {
        let q = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let r = PlantModel::new(
            Matrix::identity(2),
            Matrix::identity(2),
            q,
            vec![0.0, 0.0],
            Matrix::zeros(2, 2),
        );
        assert!(matches!(r, Err(Error::NotPsd { .. })));
    }

    // --- piecewise ---

    fn motor_segments() -> Vec<Segment> {
        // stepper-motor twin parameters, one row per motor command
        let rows = [
            (1.0, 0.0075, 5.57e-6, 46.94),
            (1.0, 0.0108, 9.81e-6, 91.38),
            (1.0, 0.0107, 9.38e-6, 46.92),
            (1.0, 0.0076, 5.57e-6, 2.48),
        ];
        rows.iter()
            .map(|&(a, b, q, sp)| Segment {
                model: PlantModel::scalar(a, b, q, 0.0, 0.0).unwrap(),
                controller: Controller::scalar(1.0, sp),
                switch_at: sp,
            })
            .collect()
    }

    #[test]
    fn single_segment_reduces_to_step() {
        let seg = Segment {
            model: PlantModel::scalar(1.0, 0.01, 0.0, 0.0, 0.0).unwrap(),
            controller: Controller::scalar(1.0, 100.0),
            switch_at: 100.0,
        };
        let mut pw = PiecewiseModel::new(vec![seg.clone()]).unwrap();
        let mut rng1 = Streams::new(7).stream("pw", 0);
        let mut rng2 = Streams::new(7).stream("pw", 0);
        let (y_pw, w_pw, ev) = piecewise_step(&mut pw, &[0.0], &[1.0], &mut rng1).unwrap();
        let (y_st, w_st) = step(&seg.model, &[0.0], &[1.0], &mut rng2);
        assert_eq!(y_pw, y_st);
        assert_eq!(w_pw, w_st);
        assert_eq!(ev, SegmentEvent::None);
    }

    #[test]
    fn first_segment_switches_at_its_setpoint() {
        let mut pw = PiecewiseModel::new(motor_segments()).unwrap();
        let mut rng = Streams::new(8).stream("pw", 0);
        let mut y = vec![0.0];
        let mut switched_at = None;
        for t in 0..200_000 {
            let u = vec![0.65 / 0.0075]; // constant drive toward the setpoint
            let (y_next, _, ev) = piecewise_step(&mut pw, &y, &u, &mut rng).unwrap();
            if ev == SegmentEvent::Switched {
                switched_at = Some((t, y_next[0]));
                break;
            }
            y = y_next;
        }
        let (_, y_cross) = switched_at.expect("never switched");
        assert!(y_cross >= 46.94);
        assert_eq!(pw.active_index(), 1);
    }

    #[test]
    fn monotone_trajectory_yields_one_switch_per_segment() {
        // four rising segments, noise off: exactly 3 switches then completion
        let mk = |sp: f64| Segment {
            model: PlantModel::scalar(1.0, 1.0, 0.0, 0.0, 0.0).unwrap(),
            controller: Controller::scalar(1.0, sp),
            switch_at: sp,
        };
        let mut pw = PiecewiseModel::new(vec![mk(1.0), mk(2.0), mk(3.0), mk(4.0)]).unwrap();
        let mut rng = Streams::new(9).stream("pw", 0);
        let mut y = vec![0.0];
        let mut switches = 0;
        let mut completed = false;
        for _ in 0..100 {
            let (y_next, _, ev) = piecewise_step(&mut pw, &y, &[0.1], &mut rng).unwrap();
            match ev {
                SegmentEvent::Switched => switches += 1,
                SegmentEvent::Completed => {
                    completed = true;
                    break;
                }
                SegmentEvent::None => {}
            }
            y = y_next;
        }
        assert_eq!(switches, 3);
        assert!(completed);
        assert!(piecewise_step(&mut pw, &y, &[0.1], &mut rng).is_err());
    }

    #[test]
    fn falling_segment_direction_resolved_on_entry() {
        // start above the target: the switch must fire on a downward crossing
        let seg = Segment {
            model: PlantModel::scalar(1.0, 1.0, 0.0, 0.0, 0.0).unwrap(),
            controller: Controller::scalar(1.0, 2.48),
            switch_at: 2.48,
        };
        let mut pw = PiecewiseModel::new(vec![seg]).unwrap();
        let mut rng = Streams::new(10).stream("pw", 0);
        let mut y = vec![46.92];
        loop {
            let (y_next, _, ev) = piecewise_step(&mut pw, &y, &[-1.0], &mut rng).unwrap();
            if ev == SegmentEvent::Completed {
                assert!(y_next[0] <= 2.48);
                break;
            }
            y = y_next;
            assert!(y[0] > 2.48);
        }
    }
}
