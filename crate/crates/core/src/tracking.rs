//! Constant turn rate and velocity (CTRV) extended Kalman filter.
//!
//! The same filter runs in local (platform frame) and global (world frame)
//! fusion: one [`ctrv_predict`] per frame followed by up to n position
//! updates, one per associated observation.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2x5, Matrix5, Matrix5x2, SymmetricEigen, Vector2, Vector5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_models::GaussianEstimate;
use crate::geometry::{normalize_angle, rotation};

/// Yaw rates below this magnitude use the straight-line limit of the model.
pub const YAW_RATE_EPS: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("innovation covariance is singular or not positive definite")]
    SingularInnovation,
    #[error("invalid process noise configuration: {0}")]
    InvalidConfig(String),
}

/// `[x, y, v, psi, psi_dot]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub psi: f64,
    pub psi_dot: f64,
}

impl KinematicState {
    pub fn new(x: f64, y: f64, v: f64, psi: f64, psi_dot: f64) -> Self {
        Self {
            x,
            y,
            v,
            psi: normalize_angle(psi),
            psi_dot,
        }
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.x, self.y, self.v, self.psi, self.psi_dot)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEstimate {
    pub state: KinematicState,
    pub covariance: Matrix5<f64>,
}

impl TrackEstimate {
    pub fn position_covariance(&self) -> Matrix2<f64> {
        self.covariance.fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// New estimate seeded from a single position observation. Speed, heading
    /// and yaw rate start at zero with the variances in `init`.
    pub fn from_observation(z: &GaussianEstimate, init: &InitialUncertainty) -> Self {
        let mut covariance = Matrix5::zeros();
        covariance.fixed_view_mut::<2, 2>(0, 0).copy_from(&z.covariance);
        covariance[(2, 2)] = init.speed_var;
        covariance[(3, 3)] = init.heading_var;
        covariance[(4, 4)] = init.yaw_rate_var;
        Self {
            state: KinematicState::new(z.mean.x, z.mean.y, 0.0, 0.0, 0.0),
            covariance,
        }
    }
}

/// Prior variances of the unobserved components of a new track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialUncertainty {
    pub speed_var: f64,
    pub heading_var: f64,
    pub yaw_rate_var: f64,
    /// Below this speed the heading is unobservable; a track this slow that
    /// jumps outside its gate takes speed and heading from the jump.
    #[serde(default = "default_restart_speed")]
    pub restart_speed: f64,
}

fn default_restart_speed() -> f64 {
    0.1
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            speed_var: 1.0,
            heading_var: PI * PI,
            yaw_rate_var: 1.0,
            restart_speed: default_restart_speed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseConfig {
    pub sigma_ax: f64,
    pub sigma_ay: f64,
    pub sigma_a: f64,
    pub sigma_psi: f64,
    pub sigma_psi_dot: f64,
    pub dt: f64,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        Self {
            sigma_ax: 0.5,
            sigma_ay: 0.5,
            sigma_a: 0.5,
            sigma_psi: 0.1,
            sigma_psi_dot: 0.5,
            dt: 0.125,
        }
    }
}

impl ProcessNoiseConfig {
    pub fn with_dt(self, dt: f64) -> Self {
        Self { dt, ..self }
    }

    pub fn validate(&self) -> Result<(), TrackingError> {
        let sigmas = [
            self.sigma_ax,
            self.sigma_ay,
            self.sigma_a,
            self.sigma_psi,
            self.sigma_psi_dot,
        ];
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(TrackingError::InvalidConfig("all sigmas must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(TrackingError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }

    /// Process noise matrix, laid out entry for entry with the `v`-row
    /// cross terms on `sigma_ax` / `sigma_ay`. This layout is indefinite (the
    /// `[x, y, v]` block has determinant `-dt^10 * ... / 16`), so use
    /// [`Self::q_matrix`] inside the filter.
    pub fn q_matrix_raw(&self) -> Matrix5<f64> {
        let dt = self.dt;
        let (dt2, dt3, dt4) = (dt * dt, dt * dt * dt, dt * dt * dt * dt);
        let ax = self.sigma_ax * self.sigma_ax;
        let ay = self.sigma_ay * self.sigma_ay;
        let a = self.sigma_a * self.sigma_a;
        #[rustfmt::skip]
        let q = Matrix5::new(
            dt4 / 4.0 * ax, 0.0,            dt3 / 2.0 * ax, 0.0,                                  0.0,
            0.0,            dt4 / 4.0 * ay, dt3 / 2.0 * ay, 0.0,                                  0.0,
            dt3 / 2.0 * ax, dt3 / 2.0 * ay, dt2 * a,        0.0,                                  0.0,
            0.0,            0.0,            0.0,            dt2 * self.sigma_psi * self.sigma_psi, 0.0,
            0.0,            0.0,            0.0,            0.0, dt2 * self.sigma_psi_dot * self.sigma_psi_dot,
        );
        symmetrize5(&q)
    }

    /// [`Self::q_matrix_raw`] projected onto the PSD cone (negative
    /// eigenvalues clipped to zero).
    pub fn q_matrix(&self) -> Matrix5<f64> {
        let eig = SymmetricEigen::new(self.q_matrix_raw());
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let v = eig.eigenvectors;
        symmetrize5(&(v * Matrix5::from_diagonal(&clipped) * v.transpose()))
    }
}

/// CTRV motion over `dt`.
pub fn ctrv_motion(state: &KinematicState, dt: f64) -> KinematicState {
    let KinematicState { x, y, v, psi, psi_dot } = *state;
    let (nx, ny) = if psi_dot.abs() >= YAW_RATE_EPS {
        let psi_end = psi + psi_dot * dt;
        (
            x + v / psi_dot * (psi_end.sin() - psi.sin()),
            y + v / psi_dot * (psi.cos() - psi_end.cos()),
        )
    } else {
        (x + v * dt * psi.cos(), y + v * dt * psi.sin())
    };
    KinematicState::new(nx, ny, v, psi + psi_dot * dt, psi_dot)
}

/// Jacobian of [`ctrv_motion`] with respect to the state.
pub fn ctrv_jacobian(state: &KinematicState, dt: f64) -> Matrix5<f64> {
    let KinematicState { v, psi, psi_dot, .. } = *state;
    let mut f = Matrix5::identity();
    let (sp, cp) = psi.sin_cos();
    if psi_dot.abs() >= YAW_RATE_EPS {
        let psi_end = psi + psi_dot * dt;
        let (se, ce) = psi_end.sin_cos();
        let w = psi_dot;
        f[(0, 2)] = (se - sp) / w;
        f[(0, 3)] = v / w * (ce - cp);
        f[(0, 4)] = v * dt / w * ce - v / (w * w) * (se - sp);
        f[(1, 2)] = (cp - ce) / w;
        f[(1, 3)] = v / w * (se - sp);
        f[(1, 4)] = v * dt / w * se - v / (w * w) * (cp - ce);
    } else {
        f[(0, 2)] = dt * cp;
        f[(0, 3)] = -v * dt * sp;
        f[(0, 4)] = -0.5 * v * dt * dt * sp;
        f[(1, 2)] = dt * sp;
        f[(1, 3)] = v * dt * cp;
        f[(1, 4)] = 0.5 * v * dt * dt * cp;
    }
    f[(3, 4)] = dt;
    f
}

pub fn ctrv_predict(track: &TrackEstimate, cfg: &ProcessNoiseConfig) -> TrackEstimate {
    let f = ctrv_jacobian(&track.state, cfg.dt);
    let covariance = symmetrize5(&(f * track.covariance * f.transpose() + cfg.q_matrix()));
    TrackEstimate {
        state: ctrv_motion(&track.state, cfg.dt),
        covariance,
    }
}

fn observation_matrix() -> Matrix2x5<f64> {
    Matrix2x5::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
}

/// Innovation `z - Hx` and its covariance `H P H^T + R`.
pub fn innovation(track: &TrackEstimate, z: &GaussianEstimate) -> (Vector2<f64>, Matrix2<f64>) {
    let nu = z.mean - track.state.position();
    let s = track.position_covariance() + z.covariance;
    (nu, (s + s.transpose()) * 0.5)
}

/// Position update with `H = [I2 0]`, Joseph form.
pub fn ekf_update(track: &TrackEstimate, z: &GaussianEstimate) -> Result<TrackEstimate, TrackingError> {
    let h = observation_matrix();
    let (nu, s) = innovation(track, z);
    let s_inv = invert_spd2(&s).ok_or(TrackingError::SingularInnovation)?;
    let p = &track.covariance;
    let pht: Matrix5x2<f64> = p * h.transpose();
    let k = pht * s_inv;
    let x = track.state.to_vector() + k * nu;
    let i_kh = Matrix5::identity() - k * h;
    let covariance = symmetrize5(&(i_kh * p * i_kh.transpose() + k * z.covariance * k.transpose()));
    Ok(TrackEstimate {
        state: KinematicState::from_vector(&x),
        covariance,
    })
}

/// A measurement tagged with the identifier of the pipeline or platform
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedEstimate {
    pub source: String,
    pub estimate: GaussianEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiUpdate {
    pub estimate: TrackEstimate,
    /// `(source, error)` for every measurement that was skipped.
    pub skipped: Vec<(String, TrackingError)>,
}

/// Sequential updates in source order. Measurements whose update fails are
/// skipped and reported; the rest still apply.
pub fn multi_update(track: &TrackEstimate, zs: &[SourcedEstimate]) -> MultiUpdate {
    let mut order: Vec<&SourcedEstimate> = zs.iter().collect();
    order.sort_by(|a, b| a.source.cmp(&b.source));
    let mut estimate = *track;
    let mut skipped = Vec::new();
    for z in order {
        match ekf_update(&estimate, &z.estimate) {
            Ok(next) => estimate = next,
            Err(e) => skipped.push((z.source.clone(), e)),
        }
    }
    MultiUpdate { estimate, skipped }
}

/// Re-expresses a track in a frame that moved by `translation` (given in the
/// old frame) and turned by `rotation_angle`.
pub fn change_frame(track: &TrackEstimate, translation: Vector2<f64>, rotation_angle: f64) -> TrackEstimate {
    let r = rotation(-rotation_angle);
    let p = r * (track.state.position() - translation);
    let mut j = Matrix5::identity();
    j.fixed_view_mut::<2, 2>(0, 0).copy_from(&r);
    TrackEstimate {
        state: KinematicState::new(
            p.x,
            p.y,
            track.state.v,
            track.state.psi - rotation_angle,
            track.state.psi_dot,
        ),
        covariance: symmetrize5(&(j * track.covariance * j.transpose())),
    }
}

/// Normalized estimation error squared over the full state.
pub fn nees(track: &TrackEstimate, truth: &KinematicState) -> Option<f64> {
    let mut e = truth.to_vector() - track.state.to_vector();
    e[3] = normalize_angle(e[3]);
    let inv = track.covariance.try_inverse()?;
    Some((e.transpose() * inv * e)[(0, 0)])
}

pub(crate) fn invert_spd2(s: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    if !(det.is_finite() && det > 0.0 && s[(0, 0)] > 0.0) {
        return None;
    }
    // Reject near-singular matrices relative to their scale.
    if det <= 1e-300 || det < f64::EPSILON * f64::EPSILON * s[(0, 0)] * s[(1, 1)] {
        return None;
    }
    Some(Matrix2::new(s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]) / det)
}

pub fn symmetrize5(m: &Matrix5<f64>) -> Matrix5<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue5(m: &Matrix5<f64>) -> f64 {
    SymmetricEigen::new(symmetrize5(m)).eigenvalues.min()
}
