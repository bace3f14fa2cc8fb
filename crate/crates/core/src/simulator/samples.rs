//! Synthetic calibration data: (predictor, error) samples drawn through the
//! same noise paths the scenarios use, for refitting a model set.

use rand::Rng;

use super::rng::named_stream;
use super::sensors::{synth_localizer, synth_sensor_frame, SensorSpec};
use super::SimulatorError;
use crate::calibration::{match_observations_to_truth, SampleRecord};
use crate::error_models::{sensor_to_platform, ModelSet, PlatformPose, SensorErrorModels, SensorPose};
use crate::geometry::{rotation, Vec2};

/// Where samples are taken along each predictor axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDesign {
    /// Sensor ranges, meters. Samples cycle through these in order.
    pub distances: Vec<f64>,
    /// Localizer speeds, m/s.
    pub speeds: Vec<f64>,
}

impl Default for SampleDesign {
    /// The ends of the operating range. Sensor noise grows with range, so
    /// splitting samples between the extremes pins an affine fit far better
    /// than spreading them uniformly.
    fn default() -> Self {
        Self {
            distances: vec![0.1, 4.5],
            speeds: vec![0.0, 0.5],
        }
    }
}

fn sensor_samples(
    spec: &SensorSpec,
    models: &SensorErrorModels,
    prefix: &str,
    design: &SampleDesign,
    n: usize,
    seed: u64,
    out: &mut Vec<SampleRecord>,
) -> Result<(), SimulatorError> {
    let mut rng = named_stream(seed, &format!("calibration/{prefix}"));
    let sensor = SensorPose::new(0.0, 0.0, 0.0);
    let half_fov = 0.9 * spec.fov.min(std::f64::consts::TAU - 1e-6) / 2.0;
    let spec = SensorSpec {
        miss_probability: 0.0,
        clutter_rate: 0.0,
        max_range: f64::INFINITY,
        ..spec.clone()
    };
    for k in 0..n {
        let d = design.distances[k % design.distances.len()];
        let bearing = rng.random_range(-half_fov..=half_fov);
        let target = rotation(bearing) * Vec2::new(d, 0.0);
        let obs = synth_sensor_frame(&spec, models, &sensor, &[target], &mut rng)?;
        let points: Vec<Vec2> = obs.iter().map(|o| sensor_to_platform(o, &sensor).0).collect();
        let matched = match_observations_to_truth(&points, &[target], Vec2::zeros(), f64::INFINITY);
        for pair in matched.pairs {
            out.push(SampleRecord {
                predictor: pair.range,
                error: pair.distal_error,
                component: format!("{prefix}_distal"),
                source: "simulator".into(),
            });
            out.push(SampleRecord {
                predictor: pair.range,
                error: pair.perpendicular_error,
                component: format!("{prefix}_perpendicular"),
                source: "simulator".into(),
            });
        }
    }
    Ok(())
}

/// `n` samples for each of the six components of `models`, in the naming of
/// [`ModelSet`] fields. Sensor errors come from matching noisy detections
/// to the true target; localizer errors are resolved along and across the
/// true heading.
pub fn calibration_samples(
    models: &ModelSet,
    design: &SampleDesign,
    n: usize,
    seed: u64,
) -> Result<Vec<SampleRecord>, SimulatorError> {
    if design.distances.is_empty() || design.speeds.is_empty() {
        return Err(SimulatorError::InvalidConfig(
            "sample design needs at least one point per axis".into(),
        ));
    }
    if design
        .distances
        .iter()
        .chain(&design.speeds)
        .any(|p| !(p.is_finite() && *p >= 0.0))
    {
        return Err(SimulatorError::InvalidConfig(
            "sample design points must be finite and non-negative".into(),
        ));
    }
    if design.distances.iter().any(|d| *d <= 0.0) {
        return Err(SimulatorError::InvalidConfig("sensor ranges must be positive".into()));
    }
    let mut out = Vec::with_capacity(6 * n);
    sensor_samples(
        &SensorSpec::camera(),
        &models.camera(),
        "camera",
        design,
        n,
        seed,
        &mut out,
    )?;
    sensor_samples(
        &SensorSpec::lidar(),
        &models.lidar(),
        "lidar",
        design,
        n,
        seed,
        &mut out,
    )?;

    let mut rng = named_stream(seed, "calibration/localizer");
    let localizer = models.localizer();
    for k in 0..n {
        let v = design.speeds[k % design.speeds.len()];
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let truth = PlatformPose::new(0.0, 0.0, theta, v);
        let read = synth_localizer(&truth, &localizer, 0.0, &mut rng)?;
        let e = rotation(-theta) * Vec2::new(read.x, read.y);
        for (component, error) in [("localizer_longitudinal", e.x), ("localizer_lateral", e.y)] {
            out.push(SampleRecord {
                predictor: v,
                error,
                component: component.into(),
                source: "simulator".into(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_gets_n_samples_on_the_design() {
        let design = SampleDesign::default();
        let s = calibration_samples(&ModelSet::table_iv_parameterized(), &design, 100, 3).unwrap();
        assert_eq!(s.len(), 600);
        for c in ["camera_distal", "lidar_perpendicular", "localizer_lateral"] {
            let mine: Vec<_> = s.iter().filter(|r| r.component == c).collect();
            assert_eq!(mine.len(), 100);
            let grid = if c.starts_with("localizer") {
                &design.speeds
            } else {
                &design.distances
            };
            assert!(mine.iter().all(|r| grid.iter().any(|g| (g - r.predictor).abs() < 1e-9)));
        }
    }

    #[test]
    fn noiseless_models_give_floor_sized_errors() {
        let s = calibration_samples(&ModelSet::noiseless(), &SampleDesign::default(), 200, 1).unwrap();
        assert!(s.iter().all(|r| r.error.abs() < 1e-5));
    }

    #[test]
    fn bad_designs_are_rejected() {
        let m = ModelSet::table_iv_fixed();
        let empty = SampleDesign {
            distances: vec![],
            ..Default::default()
        };
        assert!(calibration_samples(&m, &empty, 10, 1).is_err());
        let zero = SampleDesign {
            distances: vec![0.0],
            ..Default::default()
        };
        assert!(calibration_samples(&m, &zero, 10, 1).is_err());
    }
}
