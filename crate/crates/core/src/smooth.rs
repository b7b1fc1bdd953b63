//! Error-state Kalman smoothing of the per-frame angle stream.
//!
//! Two-state constant-velocity model (angle, angular velocity) with a scalar
//! angle measurement. The nominal state is propagated directly; the filter
//! estimates the error of that nominal, injects it, and resets. For this
//! linear model that is algebraically the ordinary Kalman filter.
//!
//! Only the steady-state ratio of predicted (prior) angle variance to
//! measurement variance is configured. The white-noise-acceleration density
//! `q` that produces that ratio is found once by bisection on the Riccati
//! recursion.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// Steady-state prior angle variance over measurement variance.
    pub ratio: f64,
    /// Sample interval, seconds.
    pub dt: f64,
    /// Measurement variance, deg².
    pub noise_scale: f64,
    /// Initial variance of both state components.
    pub initial_var: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            ratio: 2.67,
            dt: 0.02,
            noise_scale: 1.0,
            initial_var: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub angle: f64,
    pub velocity: f64,
    pub cov: [[f64; 2]; 2],
    /// Last measurement residual before the update.
    pub innovation: f64,
}

impl KalmanState {
    pub fn from_measurement(angle: f64, initial_var: f64) -> Self {
        KalmanState {
            angle,
            velocity: 0.0,
            cov: [[initial_var, 0.0], [0.0, initial_var]],
            innovation: 0.0,
        }
    }

    pub fn cov_eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [_, d]] = self.cov;
        let tr = 0.5 * (a + d);
        let disc = (0.25 * (a - d).powi(2) + b * b).sqrt();
        [tr - disc, tr + disc]
    }
}

type Mat2 = [[f64; 2]; 2];

fn process_noise(q: f64, dt: f64) -> Mat2 {
    [
        [q * dt.powi(3) / 3.0, q * dt.powi(2) / 2.0],
        [q * dt.powi(2) / 2.0, q * dt],
    ]
}

fn predict_cov(p: &Mat2, dt: f64, qm: &Mat2) -> Mat2 {
    // F P F^T with F = [[1, dt], [0, 1]]
    let p00 = p[0][0] + dt * (p[1][0] + p[0][1]) + dt * dt * p[1][1];
    let p01 = p[0][1] + dt * p[1][1];
    let p11 = p[1][1];
    [
        [p00 + qm[0][0], p01 + qm[0][1]],
        [p01 + qm[1][0], p11 + qm[1][1]],
    ]
}

/// Joseph-form measurement update of the covariance for H = [1, 0].
fn update_cov(p: &Mat2, k: [f64; 2], r: f64) -> Mat2 {
    // A = I - K H
    let a = [[1.0 - k[0], 0.0], [-k[1], 1.0]];
    let mut ap = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            ap[i][j] = a[i][0] * p[0][j] + a[i][1] * p[1][j];
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = ap[i][0] * a[j][0] + ap[i][1] * a[j][1] + k[i] * k[j] * r;
        }
    }
    let off = 0.5 * (out[0][1] + out[1][0]);
    out[0][1] = off;
    out[1][0] = off;
    out
}

/// Steady-state prior angle variance for process density `q`.
fn steady_prior(q: f64, dt: f64, r: f64) -> f64 {
    let qm = process_noise(q, dt);
    let mut p = [[r, 0.0], [0.0, r]];
    let mut last = f64::INFINITY;
    for _ in 0..200_000 {
        let prior = predict_cov(&p, dt, &qm);
        let s = prior[0][0] + r;
        let k = [prior[0][0] / s, prior[1][0] / s];
        p = update_cov(&prior, k, r);
        if (prior[0][0] - last).abs() <= 1e-13 * prior[0][0].abs().max(1e-300) {
            return prior[0][0];
        }
        last = prior[0][0];
    }
    last
}

/// A configured filter: the config plus its calibrated process density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter {
    pub config: KalmanConfig,
    pub q: f64,
    process: Mat2,
}

impl KalmanFilter {
    pub fn new(config: KalmanConfig) -> Result<Self> {
        if !(config.ratio > 0.0 && config.dt > 0.0 && config.noise_scale > 0.0 && config.initial_var > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kalman ratio, dt, noise scale and initial variance must be > 0: {config:?}"
            )));
        }
        let r = config.noise_scale;
        let target = config.ratio * r;
        let (mut lo, mut hi) = ((1e-12f64).ln(), (1e16f64).ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if steady_prior(mid.exp() * r, config.dt, r) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        let q = (0.5 * (lo + hi)).exp() * r;
        Ok(KalmanFilter {
            config,
            q,
            process: process_noise(q, config.dt),
        })
    }

    /// Steady-state prior variance over measurement variance actually
    /// achieved by the calibrated `q`.
    pub fn achieved_ratio(&self) -> f64 {
        steady_prior(self.q, self.config.dt, self.config.noise_scale) / self.config.noise_scale
    }

    pub fn initial_state(&self, measurement: f64) -> KalmanState {
        KalmanState::from_measurement(measurement, self.config.initial_var)
    }

    /// Constant-velocity predict followed by the measurement update.
    pub fn step(&self, state: &KalmanState, measurement: f64) -> Result<KalmanState> {
        if !measurement.is_finite() {
            return Err(Error::Numeric(format!("non-finite measurement {measurement}")));
        }
        let dt = self.config.dt;
        let r = self.config.noise_scale;
        let angle = state.angle + dt * state.velocity;
        let velocity = state.velocity;
        let prior = predict_cov(&state.cov, dt, &self.process);
        let s = prior[0][0] + r;
        let k = [prior[0][0] / s, prior[1][0] / s];
        let innovation = measurement - angle;
        let next = KalmanState {
            angle: angle + k[0] * innovation,
            velocity: velocity + k[1] * innovation,
            cov: update_cov(&prior, k, r),
            innovation,
        };
        if !(next.angle.is_finite() && next.velocity.is_finite()) {
            return Err(Error::Numeric("kalman state became non-finite".into()));
        }
        Ok(next)
    }

    pub fn smooth_series(&self, estimates: &[f64]) -> Result<Vec<f64>> {
        let Some(&first) = estimates.first() else {
            return Ok(Vec::new());
        };
        let mut state = self.initial_state(first);
        if !first.is_finite() {
            return Err(Error::Numeric(format!("non-finite measurement {first}")));
        }
        let mut out = Vec::with_capacity(estimates.len());
        out.push(state.angle);
        for &z in &estimates[1..] {
            state = self.step(&state, z)?;
            out.push(state.angle);
        }
        Ok(out)
    }
}

/// Convenience wrapper over [`KalmanFilter::smooth_series`].
pub fn smooth_series(estimates: &[f64], config: &KalmanConfig) -> Result<Vec<f64>> {
    KalmanFilter::new(*config)?.smooth_series(estimates)
}
