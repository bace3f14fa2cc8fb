//! Deterministic 2D recreation of the figure-8 test bed: vehicles driving
//! the track under a traffic light, infrastructure cameras, and synthetic
//! sensor and localizer readings with exact ground truth.

pub mod path;
pub mod rng;
pub mod samples;
pub mod sensors;
pub mod vehicle;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_models::{ModelError, ModelSet, PlatformPose, SensorPose};
use crate::evaluation::FusionSettings;
use crate::geometry::{normalize_angle, rotation, Vec2};
use crate::local_fusion::{EgoMotion, LocalFrame};

pub use path::{Approach, FigureEight, PathPoint};
pub use rng::{named_stream, StreamRng};
pub use samples::{calibration_samples, SampleDesign};
pub use sensors::{
    sensor_world_pose, synth_localizer, synth_sensor_frame, CorrelatedLocalizer, SensorKind, SensorSpec,
};
pub use vehicle::{step_vehicle, DrivingConfig, StepContext, TrafficLightConfig, VehicleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulatorError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Names of the eight standard scenarios.
pub const TABLE_II_SCENARIOS: [&str; 8] = [
    "sm/sp",
    "sm/de",
    "lg/sp",
    "lg/de",
    "sm/sp/CIS",
    "sm/de/CIS",
    "lg/sp/CIS",
    "lg/de/CIS",
];

fn default_truth_models() -> ModelSet {
    ModelSet::table_iv_parameterized()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub light: TrafficLightConfig,
    pub accel_limit: f64,
    pub min_gap: f64,
    pub cav_sensors: Vec<SensorSpec>,
    pub cis_sensors: Vec<SensorSpec>,
    /// Variance (m^2, per axis) of a surveyed infrastructure pose.
    pub cis_pose_variance: f64,
    pub localizer_heading_sigma: f64,
    /// Per-tick autoregressive coefficient of the localizer noise.
    pub localizer_correlation: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            light: TrafficLightConfig::default(),
            accel_limit: 1.0,
            min_gap: 0.4,
            cav_sensors: vec![SensorSpec::camera(), SensorSpec::lidar()],
            cis_sensors: vec![SensorSpec {
                pose: SensorPose::new(0.0, 0.0, 0.0),
                ..SensorSpec::camera()
            }],
            cis_pose_variance: 1e-6,
            localizer_heading_sigma: 0.01,
            localizer_correlation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub s_l: f64,
    pub cav_count: usize,
    pub cis_count: usize,
    pub duration: f64,
    pub tick_rate: f64,
    pub target_speed: f64,
    pub seed: u64,
    #[serde(default = "default_truth_models")]
    pub truth_models: ModelSet,
    /// Model set file for the parameterized fusion mode, relative to the
    /// config file. Resolved by the loader, which then clears it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<String>,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub fusion: FusionSettings,
}

impl ScenarioConfig {
    /// One of the standard scenarios at desk scale (2 minutes, 8 Hz).
    pub fn table_ii(name: &str, seed: u64) -> Option<Self> {
        let (s_l, cav_count, cis_count) = match name {
            "sm/sp" => (1.0, 2, 0),
            "sm/de" => (1.0, 4, 0),
            "lg/sp" => (2.0, 2, 0),
            "lg/de" => (2.0, 4, 0),
            "sm/sp/CIS" => (1.0, 2, 1),
            "sm/de/CIS" => (1.0, 4, 2),
            "lg/sp/CIS" => (2.0, 2, 1),
            "lg/de/CIS" => (2.0, 4, 2),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            s_l,
            cav_count,
            cis_count,
            duration: 120.0,
            tick_rate: 8.0,
            target_speed: 0.5,
            seed,
            truth_models: ModelSet::table_iv_parameterized(),
            model_file: None,
            world: WorldConfig::default(),
            fusion: FusionSettings::default(),
        })
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: &str| Err(SimulatorError::InvalidConfig(format!("{}: {m}", self.name)));
        if !(self.s_l > 0.0 && self.s_l.is_finite()) {
            return bad("s_l must be positive");
        }
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return bad("tick_rate must be positive");
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be non-negative");
        }
        if !(self.target_speed > 0.0 && self.target_speed.is_finite()) {
            return bad("target_speed must be positive");
        }
        if self.cis_count > CIS_SITES {
            return bad("at most 4 infrastructure sensors are supported");
        }
        if !(self.world.accel_limit > 0.0) || !(self.world.min_gap >= 0.0) {
            return bad("accel_limit must be positive and min_gap non-negative");
        }
        if !(0.0..1.0).contains(&self.world.localizer_correlation) {
            return bad("localizer_correlation must be in [0, 1)");
        }
        if !(self.world.cis_pose_variance >= 0.0) || !(self.world.localizer_heading_sigma >= 0.0) {
            return bad("variances must be non-negative");
        }
        let l = self.world.light;
        if !(l.green > 0.0 && l.red >= 0.0) {
            return bad("light phases must be positive");
        }
        if self.cav_count > 0 {
            let spacing = FigureEight::new(self.s_l).total_length() / self.cav_count as f64;
            if spacing <= self.world.min_gap {
                return bad("too many vehicles for the track length");
            }
        }
        for s in self.world.cav_sensors.iter().chain(&self.world.cis_sensors) {
            s.validate().map_err(SimulatorError::InvalidConfig)?;
        }
        self.truth_models.validate()?;
        Ok(())
    }

    pub fn tick_count(&self) -> u64 {
        (self.duration * self.tick_rate).round() as u64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }
}

const CIS_SITES: usize = 4;

/// Infrastructure poses, all outside the loops and facing the crossing:
/// above it, below it, then two diagonal corners.
pub fn cis_poses(s_l: f64, count: usize) -> Vec<SensorPose> {
    let sites = [
        SensorPose::new(0.0, s_l, -FRAC_PI_2),
        SensorPose::new(0.0, -s_l, FRAC_PI_2),
        SensorPose::new(s_l, s_l, -3.0 * FRAC_PI_4),
        SensorPose::new(-s_l, -s_l, FRAC_PI_4),
    ];
    sites[..count.min(CIS_SITES)].to_vec()
}

pub fn cav_id(i: usize) -> String {
    format!("cav{i}")
}

pub fn cis_id(i: usize) -> String {
    format!("cis{i}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavTruth {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    /// Wrapped arc-length position on the track.
    pub s: f64,
    pub odometer: f64,
}

impl CavTruth {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn pose(&self) -> PlatformPose {
        PlatformPose::new(self.x, self.y, self.heading, self.speed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformInfo {
    pub id: String,
    pub is_static: bool,
    pub sensors: Vec<SensorSpec>,
}

/// Everything one platform produced during one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformTick {
    pub platform_id: String,
    /// Localizer reading for vehicles, surveyed pose for infrastructure.
    pub pose: PlatformPose,
    pub frame: LocalFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    /// Vehicle truth, indexed like the vehicle platforms.
    pub truth: Vec<CavTruth>,
    pub platforms: Vec<PlatformTick>,
}

struct SensorStream {
    spec: SensorSpec,
    rng: StreamRng,
}

struct PlatformSim {
    info: PlatformInfo,
    sensors: Vec<SensorStream>,
    /// `None` for surveyed platforms.
    localizer: Option<(CorrelatedLocalizer, StreamRng)>,
    fixed_pose: Option<PlatformPose>,
}

/// Tick-synchronous world. Each call to [`World::step`] emits the record for
/// the current tick and then advances the vehicles.
pub struct World {
    config: ScenarioConfig,
    path: FigureEight,
    driving: DrivingConfig,
    vehicles: Vec<VehicleState>,
    previous: Option<Vec<CavTruth>>,
    platforms: Vec<PlatformSim>,
    tick: u64,
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimulatorError> {
        config.validate()?;
        let path = FigureEight::new(config.s_l);
        let driving = DrivingConfig {
            target_speed: config.target_speed,
            accel_limit: config.world.accel_limit,
            min_gap: config.world.min_gap,
        };
        let spacing = path.total_length() / config.cav_count.max(1) as f64;
        let vehicles = (0..config.cav_count)
            .map(|i| VehicleState {
                s: path.wrap(i as f64 * spacing),
                speed: config.target_speed,
                odometer: 0.0,
            })
            .collect();

        let stream = |pid: &str, name: &str| named_stream(config.seed, &format!("{pid}/{name}"));
        let mut platforms = Vec::new();
        for i in 0..config.cav_count {
            let id = cav_id(i);
            platforms.push(PlatformSim {
                sensors: config
                    .world
                    .cav_sensors
                    .iter()
                    .map(|s| SensorStream {
                        spec: s.clone(),
                        rng: stream(&id, &s.name),
                    })
                    .collect(),
                localizer: Some((
                    CorrelatedLocalizer::new(config.world.localizer_correlation),
                    stream(&id, "localizer"),
                )),
                fixed_pose: None,
                info: PlatformInfo {
                    id,
                    is_static: false,
                    sensors: config.world.cav_sensors.clone(),
                },
            });
        }
        for (i, pose) in cis_poses(config.s_l, config.cis_count).into_iter().enumerate() {
            let id = cis_id(i);
            platforms.push(PlatformSim {
                sensors: config
                    .world
                    .cis_sensors
                    .iter()
                    .map(|s| SensorStream {
                        spec: s.clone(),
                        rng: stream(&id, &s.name),
                    })
                    .collect(),
                localizer: None,
                fixed_pose: Some(PlatformPose::new(pose.x, pose.y, pose.theta, 0.0)),
                info: PlatformInfo {
                    id,
                    is_static: true,
                    sensors: config.world.cis_sensors.clone(),
                },
            });
        }
        Ok(Self {
            config,
            path,
            driving,
            vehicles,
            previous: None,
            platforms,
            tick: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn path(&self) -> &FigureEight {
        &self.path
    }

    pub fn platforms(&self) -> Vec<PlatformInfo> {
        self.platforms.iter().map(|p| p.info.clone()).collect()
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.config.tick_count()
    }

    pub fn truth(&self) -> Vec<CavTruth> {
        self.vehicles
            .iter()
            .map(|v| {
                let p = self.path.point(v.s);
                CavTruth {
                    x: p.position.x,
                    y: p.position.y,
                    heading: p.heading,
                    speed: v.speed,
                    yaw_rate: v.speed * p.curvature,
                    s: v.s,
                    odometer: v.odometer,
                }
            })
            .collect()
    }

    fn sensor_frames(&mut self, t: f64, truth: &[CavTruth]) -> Result<Vec<PlatformTick>, SimulatorError> {
        let models = self.config.truth_models.clone();
        let heading_sigma = self.config.world.localizer_heading_sigma;
        let tick = self.tick;
        let tick_rate = self.config.tick_rate;
        let previous = self.previous.clone();
        let mut out = Vec::with_capacity(self.platforms.len());
        for (pi, platform) in self.platforms.iter_mut().enumerate() {
            let (true_pose, measured) = match platform.fixed_pose {
                Some(p) => (p, p),
                None => {
                    let truth_pose = truth[pi].pose();
                    let (loc, rng) = platform.localizer.as_mut().expect("vehicles carry a localizer");
                    let reading = loc.read(&truth_pose, &models.localizer(), heading_sigma, rng)?;
                    (truth_pose, reading)
                }
            };
            let targets: Vec<Vec2> = truth
                .iter()
                .enumerate()
                .filter(|(j, _)| platform.fixed_pose.is_some() || *j != pi)
                .map(|(_, c)| c.position())
                .collect();
            let platform_sensor_pose = SensorPose::new(true_pose.x, true_pose.y, true_pose.theta);
            let mut observations = Vec::new();
            for s in &mut platform.sensors {
                if !fires(tick, s.spec.rate, tick_rate) {
                    continue;
                }
                let m = match s.spec.kind {
                    SensorKind::Camera => models.camera(),
                    SensorKind::Lidar => models.lidar(),
                };
                let world_pose = sensor_world_pose(&platform_sensor_pose, &s.spec.pose);
                let obs = synth_sensor_frame(&s.spec, &m, &world_pose, &targets, &mut s.rng)?;
                observations.push((s.spec.name.clone(), obs));
            }
            let ego_motion = match (&previous, platform.fixed_pose) {
                (Some(prev), None) => {
                    let a = prev[pi];
                    let d = rotation(-a.heading) * (truth[pi].position() - a.position());
                    Some(EgoMotion {
                        dx: d.x,
                        dy: d.y,
                        dtheta: normalize_angle(truth[pi].heading - a.heading),
                    })
                }
                _ => None,
            };
            out.push(PlatformTick {
                platform_id: platform.info.id.clone(),
                pose: measured,
                frame: LocalFrame {
                    timestamp: t,
                    observations,
                    ego_motion,
                },
            });
        }
        Ok(out)
    }

    pub fn step(&mut self) -> Result<TickRecord, SimulatorError> {
        let dt = self.config.dt();
        let t = self.tick as f64 * dt;
        let truth = self.truth();
        let platforms = self.sensor_frames(t, &truth)?;
        let record = TickRecord {
            tick: self.tick,
            t,
            truth: truth.clone(),
            platforms,
        };

        let snapshot = self.vehicles.clone();
        for i in 0..self.vehicles.len() {
            let leader_gap = snapshot
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| self.path.forward_distance(snapshot[i].s, o.s))
                .min_by(f64::total_cmp);
            let ctx = StepContext { t, dt, leader_gap };
            self.vehicles[i] = step_vehicle(&snapshot[i], &self.path, &self.config.world.light, &self.driving, &ctx);
        }
        self.previous = Some(truth);
        self.tick += 1;
        Ok(record)
    }
}

/// Whether a sensor running at `rate` produces a frame on `tick`.
fn fires(tick: u64, rate: f64, tick_rate: f64) -> bool {
    if rate >= tick_rate {
        return true;
    }
    let k = |n: u64| (n as f64 * rate / tick_rate + 1e-9).floor();
    tick == 0 || k(tick) > k(tick - 1)
}

/// Ground truth of a whole run, keyed by vehicle id.
pub fn truth_by_vehicle(records: &[TickRecord]) -> BTreeMap<String, Vec<CavTruth>> {
    let mut out: BTreeMap<String, Vec<CavTruth>> = BTreeMap::new();
    for r in records {
        for (i, c) in r.truth.iter().enumerate() {
            out.entry(cav_id(i)).or_default().push(*c);
        }
    }
    out
}
