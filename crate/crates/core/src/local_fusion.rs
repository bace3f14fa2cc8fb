//! Per-platform fusion: sensor detections get distance-predicted
//! covariances, then JPDA association and EKF updates maintain a track list
//! in the platform frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{
    apply_associations, jpda_weights, AssociationConfig, AssociationError, AssociationResult, Detection, Track,
    TrackIdAllocator,
};
use crate::error_models::{observation_estimate, ErrorModel, ModelError, ObjectClass, PolarObservation, SensorPose};
use crate::geometry::Vec2;
use crate::tracking::{change_frame, InitialUncertainty, ProcessNoiseConfig, TrackEstimate, TrackingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalFusionError {
    #[error("frame at t={got} is not newer than the last processed frame at t={last}")]
    StaleFrame { last: f64, got: f64 },
    #[error("frame references unknown pipeline {0:?}")]
    UnknownPipeline(String),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("pipeline {pipeline}: {source}")]
    Model { pipeline: String, source: ModelError },
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPipelineConfig {
    pub name: String,
    pub pose: SensorPose,
    pub fov: f64,
    pub max_range: f64,
    pub rate: f64,
    pub distal_model: ErrorModel,
    pub perp_model: ErrorModel,
}

impl SensorPipelineConfig {
    pub fn validate(&self) -> Result<(), LocalFusionError> {
        let bad = |what: &str| Err(LocalFusionError::InvalidConfig(format!("{}: {what}", self.name)));
        if !(self.fov > 0.0 && self.fov <= 2.0 * std::f64::consts::PI + 1e-12) {
            return bad("fov must be in (0, 2pi]");
        }
        if !(self.max_range > 0.0) {
            return bad("max_range must be positive");
        }
        if !(self.rate > 0.0) {
            return bad("rate must be positive");
        }
        for m in [&self.distal_model, &self.perp_model] {
            m.validate().map_err(|source| LocalFusionError::Model {
                pipeline: self.name.clone(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Rigid motion of the platform since the previous frame, expressed in the
/// previous platform frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoMotion {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

/// One synchronized frame of detections, keyed by pipeline name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalFrame {
    pub timestamp: f64,
    pub observations: Vec<(String, Vec<PolarObservation>)>,
    #[serde(default)]
    pub ego_motion: Option<EgoMotion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LocalFusionConfig {
    pub association: AssociationConfig,
    pub process_noise: ProcessNoiseConfig,
    pub initial: InitialUncertainty,
}

/// A confirmed track as reported by local fusion (platform frame).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrack {
    pub id: u64,
    pub estimate: TrackEstimate,
    pub object_class: ObjectClass,
}

impl LocalTrack {
    pub fn position(&self) -> Vec2 {
        self.estimate.state.position()
    }
}

/// Fusion state of one platform.
#[derive(Debug, Clone)]
pub struct LocalFusion {
    pipelines: Vec<SensorPipelineConfig>,
    config: LocalFusionConfig,
    tracks: Vec<Track>,
    ids: TrackIdAllocator,
    last_timestamp: Option<f64>,
}

impl LocalFusion {
    pub fn new(pipelines: Vec<SensorPipelineConfig>, config: LocalFusionConfig) -> Result<Self, LocalFusionError> {
        for p in &pipelines {
            p.validate()?;
        }
        for (i, p) in pipelines.iter().enumerate() {
            if pipelines[..i].iter().any(|q| q.name == p.name) {
                return Err(LocalFusionError::InvalidConfig(format!(
                    "duplicate pipeline {}",
                    p.name
                )));
            }
        }
        config.association.validate()?;
        config.process_noise.validate()?;
        Ok(Self {
            pipelines,
            config,
            tracks: Vec::new(),
            ids: TrackIdAllocator::default(),
            last_timestamp: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn pipelines(&self) -> &[SensorPipelineConfig] {
        &self.pipelines
    }

    /// Converts each pipeline's detections into platform-frame Gaussians.
    pub fn detections(&self, frame: &LocalFrame) -> Result<Vec<(String, Vec<Detection>)>, LocalFusionError> {
        let mut out = Vec::new();
        for pipeline in &self.pipelines {
            let mut dets = Vec::new();
            for (name, obs) in &frame.observations {
                if name != &pipeline.name {
                    continue;
                }
                for o in obs {
                    let estimate =
                        observation_estimate(o, &pipeline.pose, &pipeline.distal_model, &pipeline.perp_model).map_err(
                            |source| LocalFusionError::Model {
                                pipeline: pipeline.name.clone(),
                                source,
                            },
                        )?;
                    dets.push(Detection {
                        source: pipeline.name.clone(),
                        estimate,
                        object_class: o.object_class,
                    });
                }
            }
            out.push((pipeline.name.clone(), dets));
        }
        Ok(out)
    }

    pub fn step(&mut self, frame: &LocalFrame) -> Result<Vec<LocalTrack>, LocalFusionError> {
        if let Some(last) = self.last_timestamp {
            if !(frame.timestamp > last) {
                return Err(LocalFusionError::StaleFrame {
                    last,
                    got: frame.timestamp,
                });
            }
        }
        for (name, _) in &frame.observations {
            if !self.pipelines.iter().any(|p| &p.name == name) {
                return Err(LocalFusionError::UnknownPipeline(name.clone()));
            }
        }
        let detections = self.detections(frame)?;

        let noise = match self.last_timestamp {
            Some(last) => self.config.process_noise.with_dt(frame.timestamp - last),
            None => self.config.process_noise,
        };
        let ego = frame.ego_motion;
        for track in &mut self.tracks {
            track.predict(&noise, &self.config.initial);
            if let Some(m) = ego {
                track.estimate = change_frame(&track.estimate, Vec2::new(m.dx, m.dy), m.dtheta);
            }
        }

        let init = &self.config.initial;
        let predicted: Vec<TrackEstimate> = self.tracks.iter().map(|t| t.gating_estimate(init)).collect();
        let mut results: Vec<AssociationResult> = Vec::with_capacity(detections.len());
        for (_, dets) in &detections {
            let zs: Vec<_> = dets.iter().map(|d| d.estimate).collect();
            results.push(jpda_weights(&predicted, &zs, &self.config.association)?);
        }
        let scans: Vec<(&[Detection], &AssociationResult)> = detections
            .iter()
            .zip(&results)
            .map(|((_, d), r)| (d.as_slice(), r))
            .collect();
        let tracks = std::mem::take(&mut self.tracks);
        let (tracks, report) = apply_associations(
            tracks,
            &scans,
            &self.config.association,
            &mut self.ids,
            &self.config.initial,
        );
        for (id, source, err) in &report.skipped_updates {
            log::debug!("track {id}: skipped update from {source}: {err}");
        }
        self.tracks = tracks;
        self.last_timestamp = Some(frame.timestamp);
        Ok(self.confirmed())
    }

    pub fn confirmed(&self) -> Vec<LocalTrack> {
        self.tracks
            .iter()
            .filter(|t| t.confirmed)
            .map(|t| LocalTrack {
                id: t.id,
                estimate: t.estimate,
                object_class: t.object_class,
            })
            .collect()
    }
}

pub fn local_fusion_step(state: &mut LocalFusion, frame: &LocalFrame) -> Result<Vec<LocalTrack>, LocalFusionError> {
    state.step(frame)
}
