//! Parameterized error predictors and the oriented 2x2 covariances built
//! from them.
//!
//! An [`ErrorModel`] maps a predictor (detected distance for perception
//! pipelines, measured speed for localizers) to an expected error standard
//! deviation through a polynomial. Two models, one per principal axis, are
//! turned into a covariance ellipse oriented along the sensor ray (distal /
//! perpendicular) or the platform heading (longitudinal / lateral).
//!
//! A single-coefficient model is the fixed (mean) baseline: it ignores the
//! predictor entirely.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, rotation, symmetrize, Mat2, Vec2};

/// Lower bound applied to every evaluated standard deviation, in meters.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid error model: coefficient list is empty")]
    EmptyCoefficients,
    #[error("invalid error model: coefficient {index} is not finite")]
    NonFiniteCoefficient { index: usize },
    #[error("predictor must be finite and non-negative, got {0}")]
    InvalidPredictor(f64),
    #[error("standard deviations must be positive, got ({0}, {1})")]
    NonPositiveSigma(f64, f64),
    #[error("expected a {expected} model, got a {found} model")]
    PredictorMismatch {
        expected: PredictorKind,
        found: PredictorKind,
    },
    #[error("observation is invalid: {0}")]
    InvalidObservation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Distance,
    Speed,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::Distance => f.write_str("distance"),
            PredictorKind::Speed => f.write_str("speed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    #[default]
    Vehicle,
    Cone,
    Other,
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectClass::Vehicle => f.write_str("vehicle"),
            ObjectClass::Cone => f.write_str("cone"),
            ObjectClass::Other => f.write_str("other"),
        }
    }
}

/// Raw detection from one sensor pipeline: range and bearing to the
/// detected centroid, bearing relative to the sensor boresight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarObservation {
    #[serde(rename = "d")]
    pub distance: f64,
    #[serde(rename = "theta")]
    pub bearing: f64,
    #[serde(rename = "class", default)]
    pub object_class: ObjectClass,
}

impl PolarObservation {
    pub fn new(distance: f64, bearing: f64, object_class: ObjectClass) -> Result<Self, ModelError> {
        if !distance.is_finite() || distance < 0.0 {
            return Err(ModelError::InvalidObservation(format!("distance {distance}")));
        }
        if !bearing.is_finite() {
            return Err(ModelError::InvalidObservation(format!("bearing {bearing}")));
        }
        Ok(Self {
            distance,
            bearing: normalize_angle(bearing),
            object_class,
        })
    }
}

/// Polynomial mapping a predictor to an expected error standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    #[serde(rename = "predictor")]
    pub predictor_kind: PredictorKind,
    /// `c0, c1, ...` in ascending powers of the predictor.
    pub coefficients: Vec<f64>,
}

impl ErrorModel {
    pub fn new(predictor_kind: PredictorKind, coefficients: Vec<f64>) -> Result<Self, ModelError> {
        let model = Self {
            predictor_kind,
            coefficients,
        };
        model.validate()?;
        Ok(model)
    }

    /// Affine model `intercept + slope * predictor`.
    pub fn affine(predictor_kind: PredictorKind, intercept: f64, slope: f64) -> Self {
        Self {
            predictor_kind,
            coefficients: vec![intercept, slope],
        }
    }

    /// Degree-0 model: the same deviation for every predictor value.
    pub fn fixed(predictor_kind: PredictorKind, sigma: f64) -> Self {
        Self {
            predictor_kind,
            coefficients: vec![sigma],
        }
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.coefficients.is_empty() {
            return Err(ModelError::EmptyCoefficients);
        }
        if let Some(index) = self.coefficients.iter().position(|c| !c.is_finite()) {
            return Err(ModelError::NonFiniteCoefficient { index });
        }
        Ok(())
    }

    /// Evaluates the polynomial at `predictor`, floored at [`SIGMA_FLOOR`].
    pub fn eval(&self, predictor: f64) -> Result<f64, ModelError> {
        self.validate()?;
        if !predictor.is_finite() || predictor < 0.0 {
            return Err(ModelError::InvalidPredictor(predictor));
        }
        // Horner
        let value = self.coefficients.iter().rev().fold(0.0, |acc, c| acc * predictor + c);
        Ok(value.max(SIGMA_FLOOR))
    }

    fn expect_kind(&self, expected: PredictorKind) -> Result<(), ModelError> {
        if self.predictor_kind != expected {
            return Err(ModelError::PredictorMismatch {
                expected,
                found: self.predictor_kind,
            });
        }
        Ok(())
    }
}

/// Free-function form of [`ErrorModel::eval`].
pub fn eval_error_model(model: &ErrorModel, predictor: f64) -> Result<f64, ModelError> {
    model.eval(predictor)
}

/// Mounting pose of a sensor in the platform (rear-axle) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SensorPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl SensorPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }
}

/// Pose and measured speed of a sensor platform in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PlatformPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl PlatformPose {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
            v,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// 2D mean plus 2x2 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEstimate {
    pub mean: Vec2,
    pub covariance: Mat2,
}

impl GaussianEstimate {
    pub fn new(mean: Vec2, covariance: Mat2) -> Self {
        Self { mean, covariance }
    }
}

/// Maps a polar detection into the platform frame. Returns the position and
/// the ray angle `theta_sensor + theta_obs`.
pub fn sensor_to_platform(obs: &PolarObservation, pose: &SensorPose) -> (Vec2, f64) {
    let phi = normalize_angle(pose.theta + obs.bearing);
    let (s, c) = phi.sin_cos();
    (Vec2::new(pose.x + obs.distance * c, pose.y + obs.distance * s), phi)
}

/// Inverse of [`sensor_to_platform`]: range and sensor-relative bearing of a
/// platform-frame point.
pub fn platform_to_sensor(point: &Vec2, pose: &SensorPose) -> (f64, f64) {
    let dx = point.x - pose.x;
    let dy = point.y - pose.y;
    (dx.hypot(dy), normalize_angle(dy.atan2(dx) - pose.theta))
}

/// Covariance ellipse with standard deviation `sigma_a` along the direction
/// `angle` and `sigma_b` across it.
pub fn rotated_covariance(sigma_a: f64, sigma_b: f64, angle: f64) -> Result<Mat2, ModelError> {
    if !(sigma_a > 0.0 && sigma_b > 0.0) {
        return Err(ModelError::NonPositiveSigma(sigma_a, sigma_b));
    }
    let r = rotation(angle);
    let d = Mat2::new(sigma_a * sigma_a, 0.0, 0.0, sigma_b * sigma_b);
    Ok(symmetrize(&(r * d * r.transpose())))
}

/// Mean and covariance of one detection in the platform frame, with the
/// covariance predicted from the detected distance.
pub fn observation_estimate(
    obs: &PolarObservation,
    pose: &SensorPose,
    distal: &ErrorModel,
    perpendicular: &ErrorModel,
) -> Result<GaussianEstimate, ModelError> {
    distal.expect_kind(PredictorKind::Distance)?;
    perpendicular.expect_kind(PredictorKind::Distance)?;
    let (mean, phi) = sensor_to_platform(obs, pose);
    let sigma_distal = distal.eval(obs.distance)?;
    let sigma_perp = perpendicular.eval(obs.distance)?;
    Ok(GaussianEstimate::new(
        mean,
        rotated_covariance(sigma_distal, sigma_perp, phi)?,
    ))
}

/// Localization covariance of a platform, oriented along its heading and
/// predicted from its measured speed.
pub fn localization_covariance(
    pose: &PlatformPose,
    longitudinal: &ErrorModel,
    lateral: &ErrorModel,
) -> Result<Mat2, ModelError> {
    longitudinal.expect_kind(PredictorKind::Speed)?;
    lateral.expect_kind(PredictorKind::Speed)?;
    rotated_covariance(longitudinal.eval(pose.v)?, lateral.eval(pose.v)?, pose.theta)
}

/// Distal and perpendicular models of one perception pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorErrorModels {
    pub distal: ErrorModel,
    pub perpendicular: ErrorModel,
}

/// Longitudinal and lateral models of one localizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerErrorModels {
    pub longitudinal: ErrorModel,
    pub lateral: ErrorModel,
}

/// The six models of a model file, one per sensing error type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSet {
    pub camera_distal: ErrorModel,
    pub camera_perpendicular: ErrorModel,
    pub lidar_distal: ErrorModel,
    pub lidar_perpendicular: ErrorModel,
    pub localizer_longitudinal: ErrorModel,
    pub localizer_lateral: ErrorModel,
}

impl ModelSet {
    /// Affine fits from the 1/10 scale characterization.
    pub fn table_iv_parameterized() -> Self {
        use PredictorKind::{Distance, Speed};
        Self {
            camera_distal: ErrorModel::affine(Distance, 0.0126, 0.0517),
            camera_perpendicular: ErrorModel::affine(Distance, 0.023, 0.0117),
            lidar_distal: ErrorModel::affine(Distance, 0.0607, 0.0165),
            lidar_perpendicular: ErrorModel::affine(Distance, 0.0361, 0.0097),
            localizer_longitudinal: ErrorModel::affine(Speed, 0.0428, 0.0782),
            localizer_lateral: ErrorModel::affine(Speed, 0.0241, 0.0841),
        }
    }

    /// Mean-error baseline from the same characterization.
    pub fn table_iv_fixed() -> Self {
        use PredictorKind::{Distance, Speed};
        Self {
            camera_distal: ErrorModel::fixed(Distance, 0.0881),
            camera_perpendicular: ErrorModel::fixed(Distance, 0.0401),
            lidar_distal: ErrorModel::fixed(Distance, 0.0848),
            lidar_perpendicular: ErrorModel::fixed(Distance, 0.0503),
            localizer_longitudinal: ErrorModel::fixed(Speed, 0.0663),
            localizer_lateral: ErrorModel::fixed(Speed, 0.0493),
        }
    }

    /// A set whose every model evaluates to the floor, i.e. noiseless.
    pub fn noiseless() -> Self {
        use PredictorKind::{Distance, Speed};
        let zero = |kind| ErrorModel::fixed(kind, 0.0);
        Self {
            camera_distal: zero(Distance),
            camera_perpendicular: zero(Distance),
            lidar_distal: zero(Distance),
            lidar_perpendicular: zero(Distance),
            localizer_longitudinal: zero(Speed),
            localizer_lateral: zero(Speed),
        }
    }

    pub fn camera(&self) -> SensorErrorModels {
        SensorErrorModels {
            distal: self.camera_distal.clone(),
            perpendicular: self.camera_perpendicular.clone(),
        }
    }

    pub fn lidar(&self) -> SensorErrorModels {
        SensorErrorModels {
            distal: self.lidar_distal.clone(),
            perpendicular: self.lidar_perpendicular.clone(),
        }
    }

    pub fn localizer(&self) -> LocalizerErrorModels {
        LocalizerErrorModels {
            longitudinal: self.localizer_longitudinal.clone(),
            lateral: self.localizer_lateral.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        use PredictorKind::{Distance, Speed};
        let checks = [
            (&self.camera_distal, Distance),
            (&self.camera_perpendicular, Distance),
            (&self.lidar_distal, Distance),
            (&self.lidar_perpendicular, Distance),
            (&self.localizer_longitudinal, Speed),
            (&self.localizer_lateral, Speed),
        ];
        for (model, kind) in checks {
            model.validate()?;
            model.expect_kind(kind)?;
        }
        Ok(())
    }
}
