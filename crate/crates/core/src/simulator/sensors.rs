//! Synthetic camera / LIDAR detections and localizer readings.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error_models::{
    platform_to_sensor, LocalizerErrorModels, ModelError, ObjectClass, PlatformPose, PolarObservation,
    SensorErrorModels, SensorPose,
};
use crate::geometry::{normalize_angle, rotation, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Camera,
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub name: String,
    pub kind: SensorKind,
    /// Mounting pose in the platform frame.
    pub pose: SensorPose,
    /// Full field of view, radians.
    pub fov: f64,
    pub max_range: f64,
    pub rate: f64,
    #[serde(default)]
    pub miss_probability: f64,
    /// Expected spurious detections per frame, uniform over the field of view.
    #[serde(default)]
    pub clutter_rate: f64,
}

impl SensorSpec {
    pub fn camera() -> Self {
        Self {
            name: "camera".into(),
            kind: SensorKind::Camera,
            pose: SensorPose::new(0.1, 0.0, 0.0),
            fov: 160f64.to_radians(),
            max_range: 6.0,
            rate: 8.0,
            miss_probability: 0.0,
            clutter_rate: 0.0,
        }
    }

    pub fn lidar() -> Self {
        Self {
            name: "lidar".into(),
            kind: SensorKind::Lidar,
            pose: SensorPose::new(0.05, 0.0, 0.0),
            fov: 2.0 * std::f64::consts::PI,
            max_range: 8.0,
            rate: 8.0,
            miss_probability: 0.0,
            clutter_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fov > 0.0 && self.fov <= 2.0 * std::f64::consts::PI + 1e-12) {
            return Err(format!("sensor {}: fov must be in (0, 2pi]", self.name));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(format!("sensor {}: max_range must be positive", self.name));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(format!("sensor {}: rate must be positive", self.name));
        }
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(format!("sensor {}: miss_probability must be in [0, 1]", self.name));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(format!("sensor {}: clutter_rate must be non-negative", self.name));
        }
        Ok(())
    }

    /// Whether a point at `(distance, bearing)` in the sensor frame is visible.
    pub fn sees(&self, distance: f64, bearing: f64) -> bool {
        distance > 1e-9 && distance <= self.max_range && bearing.abs() <= self.fov / 2.0 + 1e-12
    }
}

/// World pose of a sensor mounted at `mount` on a platform at `platform`.
pub fn sensor_world_pose(platform: &SensorPose, mount: &SensorPose) -> SensorPose {
    let p = Vec2::new(platform.x, platform.y) + rotation(platform.theta) * Vec2::new(mount.x, mount.y);
    SensorPose::new(p.x, p.y, platform.theta + mount.theta)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Noisy detections of `targets` (world positions) by one sensor at world
/// pose `sensor`. Noise is drawn along and across the true ray with the
/// models evaluated at the true distance. Every visible target consumes the
/// same three draws whether or not it is missed.
pub fn synth_sensor_frame<R: Rng + ?Sized>(
    spec: &SensorSpec,
    models: &SensorErrorModels,
    sensor: &SensorPose,
    targets: &[Vec2],
    rng: &mut R,
) -> Result<Vec<PolarObservation>, ModelError> {
    let mut out = Vec::new();
    let origin = Vec2::new(sensor.x, sensor.y);
    for target in targets {
        let (d, bearing) = platform_to_sensor(target, sensor);
        if !spec.sees(d, bearing) {
            continue;
        }
        let u: f64 = rng.random();
        let e_distal = standard_normal(rng) * models.distal.eval(d)?;
        let e_perp = standard_normal(rng) * models.perpendicular.eval(d)?;
        if u < spec.miss_probability {
            continue;
        }
        let ray = (target - origin) / d;
        let across = Vec2::new(-ray.y, ray.x);
        let noisy = target + ray * e_distal + across * e_perp;
        let (dn, bn) = platform_to_sensor(&noisy, sensor);
        out.push(PolarObservation::new(dn, bn, ObjectClass::Vehicle)?);
    }
    if spec.clutter_rate > 0.0 {
        let count = Poisson::new(spec.clutter_rate)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0);
        for _ in 0..count {
            // Uniform over the sector area.
            let d = spec.max_range * rng.random::<f64>().sqrt();
            let b = (rng.random::<f64>() - 0.5) * spec.fov;
            out.push(PolarObservation::new(d, normalize_angle(b), ObjectClass::Other)?);
        }
    }
    Ok(out)
}

/// One localizer reading: position noise along / across the true heading
/// with sigmas from the models at the true speed, heading noise
/// `heading_sigma`, speed reported exactly.
pub fn synth_localizer<R: Rng + ?Sized>(
    truth: &PlatformPose,
    models: &LocalizerErrorModels,
    heading_sigma: f64,
    rng: &mut R,
) -> Result<PlatformPose, ModelError> {
    let z = [standard_normal(rng), standard_normal(rng), standard_normal(rng)];
    apply_localizer_noise(truth, models, heading_sigma, z)
}

fn apply_localizer_noise(
    truth: &PlatformPose,
    models: &LocalizerErrorModels,
    heading_sigma: f64,
    z: [f64; 3],
) -> Result<PlatformPose, ModelError> {
    let v = truth.v.max(0.0);
    let s_long = models.longitudinal.eval(v)?;
    let s_lat = models.lateral.eval(v)?;
    let offset = rotation(truth.theta) * Vec2::new(z[0] * s_long, z[1] * s_lat);
    Ok(PlatformPose::new(
        truth.x + offset.x,
        truth.y + offset.y,
        truth.theta + z[2] * heading_sigma,
        truth.v,
    ))
}

/// Localizer whose standardized noise follows a first-order autoregressive
/// process across ticks. Each reading is still marginally Gaussian with the
/// model sigmas at the current speed; `correlation` is the per-tick AR
/// coefficient (0 gives independent readings identical to
/// [`synth_localizer`]).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedLocalizer {
    pub correlation: f64,
    state: Option<[f64; 3]>,
}

impl CorrelatedLocalizer {
    pub fn new(correlation: f64) -> Self {
        Self {
            correlation: correlation.clamp(0.0, 1.0 - 1e-12),
            state: None,
        }
    }

    pub fn read<R: Rng + ?Sized>(
        &mut self,
        truth: &PlatformPose,
        models: &LocalizerErrorModels,
        heading_sigma: f64,
        rng: &mut R,
    ) -> Result<PlatformPose, ModelError> {
        let w = [standard_normal(rng), standard_normal(rng), standard_normal(rng)];
        let z = match self.state {
            None => w,
            Some(prev) => {
                let rho = self.correlation;
                let k = (1.0 - rho * rho).sqrt();
                [
                    rho * prev[0] + k * w[0],
                    rho * prev[1] + k * w[1],
                    rho * prev[2] + k * w[2],
                ]
            }
        };
        self.state = Some(z);
        apply_localizer_noise(truth, models, heading_sigma, z)
    }
}
