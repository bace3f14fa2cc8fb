//! Road side unit fusion: platform packets carry world-frame track
//! estimates whose covariance includes the sender's localization
//! uncertainty, and a world-frame JPDA/EKF tracker fuses them.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Matrix5;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{
    apply_associations, jpda_weights, AssociationConfig, AssociationError, AssociationResult, Detection, Track,
    TrackIdAllocator,
};
use crate::error_models::{
    localization_covariance, GaussianEstimate, LocalizerErrorModels, ModelError, ObjectClass, PlatformPose,
};
use crate::geometry::{is_valid_covariance, rotation, symmetrize, Mat2, Vec2};
use crate::local_fusion::LocalTrack;
use crate::tracking::{InitialUncertainty, ProcessNoiseConfig, TrackEstimate, TrackingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlobalFusionError {
    #[error("tick at t={got} is not newer than the last fused tick at t={last}")]
    StaleTick { last: f64, got: f64 },
    #[error("invalid packet from {platform}: {reason}")]
    InvalidPacket { platform: String, reason: String },
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Local position rigidly moved into the world frame.
pub fn track_to_world(local: &Vec2, pose: &PlatformPose) -> Vec2 {
    pose.position() + rotation(pose.theta) * local
}

/// Position block of a local covariance rotated into the world frame.
pub fn covariance_to_world(p: &Matrix5<f64>, theta: f64) -> Mat2 {
    let block: Mat2 = p.fixed_view::<2, 2>(0, 0).into_owned();
    let r = rotation(theta);
    symmetrize(&(r * block * r.transpose()))
}

pub fn covariance_union(a: &Mat2, b: &Mat2) -> Mat2 {
    symmetrize(&(a + b))
}

/// Where a platform's pose covariance comes from.
#[derive(Debug, Clone, Copy)]
pub enum PoseUncertainty<'a> {
    /// Predicted from the measured speed.
    Localized(&'a LocalizerErrorModels),
    /// Fixed, e.g. a surveyed infrastructure sensor.
    Surveyed(Mat2),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketTrack {
    pub id: String,
    pub mean: Vec2,
    pub covariance: Mat2,
    pub object_class: ObjectClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformPacket {
    pub platform_id: String,
    pub timestamp: f64,
    pub pose: PlatformPose,
    pub pose_covariance: Mat2,
    pub tracks: Vec<PacketTrack>,
}

impl PlatformPacket {
    pub fn validate(&self) -> Result<(), GlobalFusionError> {
        let bad = |reason: String| GlobalFusionError::InvalidPacket {
            platform: self.platform_id.clone(),
            reason,
        };
        if !self.timestamp.is_finite() {
            return Err(bad("non-finite timestamp".into()));
        }
        let p = &self.pose;
        if ![p.x, p.y, p.theta, p.v].iter().all(|v| v.is_finite()) || p.v < 0.0 {
            return Err(bad("invalid pose".into()));
        }
        if !is_valid_covariance(&self.pose_covariance) {
            return Err(bad("pose covariance is not symmetric PSD".into()));
        }
        for t in &self.tracks {
            if !(t.mean.iter().all(|v| v.is_finite()) && is_valid_covariance(&t.covariance)) {
                return Err(bad(format!("track {} is not a valid Gaussian", t.id)));
            }
        }
        Ok(())
    }
}

/// Builds the message a platform sends: its pose with covariance, and each
/// confirmed local track moved to the world frame with the localization
/// covariance added.
pub fn packetize(
    platform_id: &str,
    timestamp: f64,
    pose: &PlatformPose,
    uncertainty: PoseUncertainty<'_>,
    tracks: &[LocalTrack],
) -> Result<PlatformPacket, ModelError> {
    let pose_covariance = match uncertainty {
        PoseUncertainty::Localized(m) => localization_covariance(pose, &m.longitudinal, &m.lateral)?,
        PoseUncertainty::Surveyed(c) => c,
    };
    let tracks = tracks
        .iter()
        .map(|t| PacketTrack {
            id: t.id.to_string(),
            mean: track_to_world(&t.position(), pose),
            covariance: covariance_union(
                &pose_covariance,
                &covariance_to_world(&t.estimate.covariance, pose.theta),
            ),
            object_class: t.object_class,
        })
        .collect();
    Ok(PlatformPacket {
        platform_id: platform_id.to_string(),
        timestamp,
        pose: *pose,
        pose_covariance,
        tracks,
    })
}

// Wire format: one JSON object per line.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePose {
    x: f64,
    y: f64,
    theta: f64,
    v: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTrack {
    id: String,
    mu: [f64; 2],
    cov: [[f64; 2]; 2],
    class: ObjectClass,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePacket {
    platform_id: String,
    t: f64,
    pose: WirePose,
    pose_cov: [[f64; 2]; 2],
    tracks: Vec<WireTrack>,
}

fn mat_to_rows(m: &Mat2) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn rows_to_mat(r: &[[f64; 2]; 2]) -> Mat2 {
    Mat2::new(r[0][0], r[0][1], r[1][0], r[1][1])
}

impl From<&PlatformPacket> for WirePacket {
    fn from(p: &PlatformPacket) -> Self {
        WirePacket {
            platform_id: p.platform_id.clone(),
            t: p.timestamp,
            pose: WirePose {
                x: p.pose.x,
                y: p.pose.y,
                theta: p.pose.theta,
                v: p.pose.v,
            },
            pose_cov: mat_to_rows(&p.pose_covariance),
            tracks: p
                .tracks
                .iter()
                .map(|t| WireTrack {
                    id: t.id.clone(),
                    mu: [t.mean.x, t.mean.y],
                    cov: mat_to_rows(&t.covariance),
                    class: t.object_class,
                })
                .collect(),
        }
    }
}

impl From<WirePacket> for PlatformPacket {
    fn from(w: WirePacket) -> Self {
        PlatformPacket {
            platform_id: w.platform_id,
            timestamp: w.t,
            pose: PlatformPose {
                x: w.pose.x,
                y: w.pose.y,
                theta: w.pose.theta,
                v: w.pose.v,
            },
            pose_covariance: rows_to_mat(&w.pose_cov),
            tracks: w
                .tracks
                .into_iter()
                .map(|t| PacketTrack {
                    id: t.id,
                    mean: Vec2::new(t.mu[0], t.mu[1]),
                    covariance: rows_to_mat(&t.cov),
                    object_class: t.class,
                })
                .collect(),
        }
    }
}

impl Serialize for PlatformPacket {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WirePacket::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PlatformPacket {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        WirePacket::deserialize(d).map(PlatformPacket::from)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed packet: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] GlobalFusionError),
}

pub fn packet_to_line(packet: &PlatformPacket) -> String {
    serde_json::to_string(packet).expect("packets hold only finite numbers and strings")
}

pub fn packet_from_line(line: &str) -> Result<PlatformPacket, WireError> {
    let p: PlatformPacket = serde_json::from_str(line)?;
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Default)]
struct InboxState {
    pending: BTreeMap<i64, BTreeMap<String, PlatformPacket>>,
    last_drained: Option<i64>,
    duplicates: u64,
    late: u64,
}

/// Concurrent packet intake. Packets are bucketed by tick; within a tick the
/// newest packet per platform wins. Packets for ticks already drained are
/// dropped.
#[derive(Debug)]
pub struct PacketInbox {
    tick_period: f64,
    state: Mutex<InboxState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InboxStats {
    pub duplicates: u64,
    pub late: u64,
}

impl PacketInbox {
    pub fn new(tick_period: f64) -> Self {
        assert!(tick_period > 0.0, "tick period must be positive");
        Self {
            tick_period,
            state: Mutex::new(InboxState::default()),
        }
    }

    pub fn tick_of(&self, t: f64) -> i64 {
        (t / self.tick_period).round() as i64
    }

    /// Returns `false` when the packet was dropped as late.
    pub fn submit(&self, packet: PlatformPacket) -> bool {
        let tick = self.tick_of(packet.timestamp);
        let mut st = self.state.lock();
        if st.last_drained.is_some_and(|d| tick <= d) {
            st.late += 1;
            log::debug!(
                "dropping late packet from {} at t={}",
                packet.platform_id,
                packet.timestamp
            );
            return false;
        }
        let bucket = st.pending.entry(tick).or_default();
        let replaced = match bucket.get(&packet.platform_id) {
            Some(old) => {
                if packet.timestamp >= old.timestamp {
                    bucket.insert(packet.platform_id.clone(), packet);
                }
                true
            }
            None => {
                bucket.insert(packet.platform_id.clone(), packet);
                false
            }
        };
        if replaced {
            st.duplicates += 1;
            log::debug!("duplicate packet for tick {tick}");
        }
        true
    }

    /// Removes and returns every packet of `tick` (ordered by platform id)
    /// and closes that tick and all earlier ones.
    pub fn drain(&self, tick: i64) -> Vec<PlatformPacket> {
        let mut st = self.state.lock();
        let mut out = Vec::new();
        let stale: Vec<i64> = st.pending.range(..tick).map(|(k, _)| *k).collect();
        for k in stale {
            if let Some(b) = st.pending.remove(&k) {
                st.late += b.len() as u64;
            }
        }
        if let Some(bucket) = st.pending.remove(&tick) {
            out.extend(bucket.into_values());
        }
        st.last_drained = Some(st.last_drained.map_or(tick, |d| d.max(tick)));
        out
    }

    pub fn stats(&self) -> InboxStats {
        let st = self.state.lock();
        InboxStats {
            duplicates: st.duplicates,
            late: st.late,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct GlobalFusionConfig {
    pub association: AssociationConfig,
    pub process_noise: ProcessNoiseConfig,
    pub initial: InitialUncertainty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTrack {
    pub id: u64,
    pub estimate: TrackEstimate,
    pub platforms: BTreeSet<String>,
    pub confirmed: bool,
}

#[derive(Debug, Clone)]
pub struct GlobalFusion {
    config: GlobalFusionConfig,
    /// Platforms that never move and are not tracked themselves.
    static_platforms: BTreeSet<String>,
    tracks: Vec<Track>,
    ids: TrackIdAllocator,
    last_timestamp: Option<f64>,
}

impl GlobalFusion {
    pub fn new(config: GlobalFusionConfig, static_platforms: BTreeSet<String>) -> Result<Self, GlobalFusionError> {
        config.association.validate()?;
        config.process_noise.validate()?;
        Ok(Self {
            config,
            static_platforms,
            tracks: Vec::new(),
            ids: TrackIdAllocator::default(),
            last_timestamp: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// One detection scan per packet: the packet's tracks plus, for moving
    /// platforms, the platform's own reported position.
    fn scans(&self, packets: &[PlatformPacket]) -> Vec<Vec<Detection>> {
        let mut sorted: Vec<&PlatformPacket> = packets.iter().collect();
        sorted.sort_by(|a, b| a.platform_id.cmp(&b.platform_id));
        sorted
            .into_iter()
            .map(|p| {
                let mut dets: Vec<Detection> = p
                    .tracks
                    .iter()
                    .map(|t| Detection {
                        source: p.platform_id.clone(),
                        estimate: GaussianEstimate::new(t.mean, t.covariance),
                        object_class: t.object_class,
                    })
                    .collect();
                if !self.static_platforms.contains(&p.platform_id) {
                    dets.push(Detection {
                        source: p.platform_id.clone(),
                        estimate: GaussianEstimate::new(p.pose.position(), p.pose_covariance),
                        object_class: ObjectClass::Vehicle,
                    });
                }
                dets
            })
            .collect()
    }

    pub fn step(&mut self, timestamp: f64, packets: &[PlatformPacket]) -> Result<Vec<GlobalTrack>, GlobalFusionError> {
        if let Some(last) = self.last_timestamp {
            if !(timestamp > last) {
                return Err(GlobalFusionError::StaleTick { last, got: timestamp });
            }
        }
        for p in packets {
            p.validate()?;
        }
        // One packet per platform: the latest wins, ties go to the later one.
        let mut latest: BTreeMap<&str, &PlatformPacket> = BTreeMap::new();
        for p in packets {
            if let Some(old) = latest.insert(&p.platform_id, p) {
                log::warn!("duplicate packet from {} in tick t={timestamp}", p.platform_id);
                if old.timestamp > p.timestamp {
                    latest.insert(&old.platform_id, old);
                }
            }
        }
        let packets: Vec<PlatformPacket> = latest.into_values().cloned().collect();
        let packets = packets.as_slice();

        let noise = match self.last_timestamp {
            Some(last) => self.config.process_noise.with_dt(timestamp - last),
            None => self.config.process_noise,
        };
        for t in &mut self.tracks {
            t.predict(&noise, &self.config.initial);
        }
        let init = &self.config.initial;
        let predicted: Vec<TrackEstimate> = self.tracks.iter().map(|t| t.gating_estimate(init)).collect();
        let scans = self.scans(packets);
        let mut results: Vec<AssociationResult> = Vec::with_capacity(scans.len());
        for dets in &scans {
            let zs: Vec<_> = dets.iter().map(|d| d.estimate).collect();
            results.push(jpda_weights(&predicted, &zs, &self.config.association)?);
        }
        let pairs: Vec<(&[Detection], &AssociationResult)> =
            scans.iter().zip(&results).map(|(d, r)| (d.as_slice(), r)).collect();
        let tracks = std::mem::take(&mut self.tracks);
        let (tracks, report) = apply_associations(
            tracks,
            &pairs,
            &self.config.association,
            &mut self.ids,
            &self.config.initial,
        );
        for (id, source, err) in &report.skipped_updates {
            log::debug!("global track {id}: skipped update from {source}: {err}");
        }
        self.tracks = tracks;
        self.last_timestamp = Some(timestamp);
        Ok(self.confirmed())
    }

    pub fn confirmed(&self) -> Vec<GlobalTrack> {
        self.tracks
            .iter()
            .filter(|t| t.confirmed)
            .map(|t| GlobalTrack {
                id: t.id,
                estimate: t.estimate,
                platforms: t.sources.clone(),
                confirmed: t.confirmed,
            })
            .collect()
    }
}

pub fn global_fusion_step(
    state: &mut GlobalFusion,
    timestamp: f64,
    packets: &[PlatformPacket],
) -> Result<Vec<GlobalTrack>, GlobalFusionError> {
    state.step(timestamp, packets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_models::ModelSet;
    use crate::tracking::{ekf_update, KinematicState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn local(x: f64, y: f64, var: f64) -> LocalTrack {
        let mut covariance = Matrix5::identity();
        covariance[(0, 0)] = var;
        covariance[(1, 1)] = var;
        LocalTrack {
            id: 1,
            estimate: TrackEstimate {
                state: KinematicState::new(x, y, 0.0, 0.0, 0.0),
                covariance,
            },
            object_class: ObjectClass::Vehicle,
        }
    }

    #[test]
    fn track_to_world_examples() {
        let p = Vec2::new(1.0, 2.0);
        assert_eq!(track_to_world(&p, &PlatformPose::new(0.0, 0.0, 0.0, 0.0)), p);
        assert_eq!(
            track_to_world(&Vec2::new(1.0, 0.0), &PlatformPose::new(5.0, 5.0, 0.0, 0.0)),
            Vec2::new(6.0, 5.0)
        );
        let w = track_to_world(&Vec2::new(1.0, 0.0), &PlatformPose::new(0.0, 0.0, FRAC_PI_2, 0.0));
        // rigid-transform oracle: x' = x cos - y sin, y' = x sin + y cos
        let (s, c) = FRAC_PI_2.sin_cos();
        assert_relative_eq!(w, Vec2::new(c, s), epsilon = 1e-15);
        assert_relative_eq!(w, Vec2::new(0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn covariance_to_world_examples() {
        let mut p = Matrix5::identity() * 3.0;
        p[(0, 1)] = 0.5;
        p[(1, 0)] = 0.5;
        let block = Mat2::new(3.0, 0.5, 0.5, 3.0);
        assert_eq!(covariance_to_world(&p, 0.0), block);
        let iso = Matrix5::identity() * 2.0;
        assert_relative_eq!(
            covariance_to_world(&iso, 1.234),
            Mat2::identity() * 2.0,
            epsilon = 1e-15
        );
        let mut d = Matrix5::zeros();
        d[(0, 0)] = 4.0;
        d[(1, 1)] = 1.0;
        let r = Mat2::new(0.0, -1.0, 1.0, 0.0);
        let oracle = r * Mat2::new(4.0, 0.0, 0.0, 1.0) * r.transpose();
        assert_relative_eq!(covariance_to_world(&d, FRAC_PI_2), oracle, epsilon = 1e-12);
        assert_relative_eq!(oracle, Mat2::new(1.0, 0.0, 0.0, 4.0));
    }

    #[test]
    fn union_examples() {
        let i = Mat2::identity();
        assert_eq!(covariance_union(&i, &i), i * 2.0);
        let a = Mat2::new(2.0, 0.3, 0.3, 1.0);
        assert_eq!(covariance_union(&a, &Mat2::zeros()), a);
        let b = Mat2::new(0.5, -0.1, -0.1, 0.7);
        assert_eq!(covariance_union(&a, &b), covariance_union(&b, &a));
    }

    fn psd(a: f64, b: f64, angle: f64) -> Mat2 {
        let r = rotation(angle);
        r * Mat2::new(a, 0.0, 0.0, b) * r.transpose()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn union_of_psd_is_psd(a1 in 0.0f64..5.0, b1 in 0.0f64..5.0, t1 in -3.2f64..3.2,
                               a2 in 0.0f64..5.0, b2 in 0.0f64..5.0, t2 in -3.2f64..3.2) {
            let u = covariance_union(&psd(a1, b1, t1), &psd(a2, b2, t2));
            prop_assert!(is_valid_covariance(&u));
        }

        #[test]
        fn world_rotation_keeps_spectrum(a in 1e-4f64..5.0, b in 1e-4f64..5.0, t in -3.2f64..3.2, theta in -7.0f64..7.0) {
            let mut p = Matrix5::identity();
            p.fixed_view_mut::<2, 2>(0, 0).copy_from(&psd(a, b, t));
            let w = covariance_to_world(&p, theta);
            let e = nalgebra::SymmetricEigen::new(w).eigenvalues;
            let (lo, hi) = (e.min(), e.max());
            prop_assert!((lo - a.min(b)).abs() < 1e-9 && (hi - a.max(b)).abs() < 1e-9);
        }

        #[test]
        fn near_zero_pose_covariance_changes_little(a in 1e-3f64..1.0, b in 1e-3f64..1.0, t in -3.2f64..3.2) {
            let eps = 1e-6;
            let c = psd(a, b, t);
            let u = covariance_union(&c, &(Mat2::identity() * eps));
            prop_assert!((u - c).abs().max() <= 2.0 * eps);
        }
    }

    #[test]
    fn surveyed_packets_keep_local_covariances() {
        let tr = local(1.0, 2.0, 0.01);
        let pose = PlatformPose::new(0.0, 1.0, -FRAC_PI_2, 0.0);
        let p = packetize(
            "cis0",
            0.0,
            &pose,
            PoseUncertainty::Surveyed(Mat2::identity() * 1e-6),
            &[tr],
        )
        .unwrap();
        assert!((p.tracks[0].covariance - Mat2::identity() * 0.01).abs().max() <= 2e-6);
    }

    #[test]
    fn moving_platforms_inflate_tracks() {
        let models = ModelSet::table_iv_parameterized().localizer();
        let tr = local(1.0, 0.0, 0.01);
        let still = packetize(
            "cav0",
            0.0,
            &PlatformPose::new(0.0, 0.0, 0.3, 0.0),
            PoseUncertainty::Localized(&models),
            std::slice::from_ref(&tr),
        )
        .unwrap();
        let moving = packetize(
            "cav0",
            0.0,
            &PlatformPose::new(0.0, 0.0, 0.3, 0.5),
            PoseUncertainty::Localized(&models),
            &[tr],
        )
        .unwrap();
        let sp = localization_covariance(
            &PlatformPose::new(0.0, 0.0, 0.3, 0.5),
            &models.longitudinal,
            &models.lateral,
        )
        .unwrap();
        let sp0 = localization_covariance(
            &PlatformPose::new(0.0, 0.0, 0.3, 0.0),
            &models.longitudinal,
            &models.lateral,
        )
        .unwrap();
        assert!(moving.tracks[0].covariance.trace() > still.tracks[0].covariance.trace());
        assert_relative_eq!(
            moving.tracks[0].covariance.trace() - still.tracks[0].covariance.trace(),
            sp.trace() - sp0.trace(),
            epsilon = 1e-12
        );
        let empty = packetize(
            "cav1",
            0.0,
            &PlatformPose::default(),
            PoseUncertainty::Localized(&models),
            &[],
        )
        .unwrap();
        assert!(empty.tracks.is_empty());
        empty.validate().unwrap();
    }

    #[test]
    fn wire_round_trip_uses_exact_field_names() {
        let models = ModelSet::table_iv_parameterized().localizer();
        let p = packetize(
            "cav0",
            1.25,
            &PlatformPose::new(0.5, -0.25, 0.3, 0.5),
            PoseUncertainty::Localized(&models),
            &[local(1.0, 2.0, 0.02)],
        )
        .unwrap();
        let line = packet_to_line(&p);
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["platform_id", "pose", "pose_cov", "t", "tracks"]);
        let t = &v["tracks"][0];
        assert_eq!(t["id"], "1");
        assert_eq!(t["class"], "vehicle");
        assert!(t["mu"].is_array() && t["cov"][1].is_array());
        assert_eq!(packet_from_line(&line).unwrap(), p);
        assert!(packet_from_line("{\"platform_id\":\"x\"}").is_err());
        let bad = line.replace("\"v\":0.5", "\"v\":-0.5");
        assert!(packet_from_line(&bad).is_err());
    }

    fn cis_packet(id: &str, t: f64, obs: Vec2, var: f64) -> PlatformPacket {
        packetize(
            id,
            t,
            &PlatformPose::default(),
            PoseUncertainty::Surveyed(Mat2::identity() * 1e-6),
            &[local(obs.x, obs.y, var)],
        )
        .unwrap()
    }

    fn statics(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_source_passthrough() {
        let mut g = GlobalFusion::new(GlobalFusionConfig::default(), statics(&["cis0"])).unwrap();
        let obj = Vec2::new(1.0, 2.0);
        let mut out = Vec::new();
        for k in 0..5 {
            out = g
                .step(k as f64 * 0.125, &[cis_packet("cis0", k as f64 * 0.125, obj, 1e-4)])
                .unwrap();
        }
        assert_eq!(out.len(), 1);
        assert!((out[0].estimate.state.position() - obj).norm() < 1e-9);
        assert_eq!(out[0].platforms, statics(&["cis0"]));
    }

    #[test]
    fn moving_platforms_are_tracked_from_their_own_pose() {
        let models = ModelSet::table_iv_parameterized().localizer();
        let mut g = GlobalFusion::new(GlobalFusionConfig::default(), BTreeSet::new()).unwrap();
        let mut out = Vec::new();
        for k in 0..4 {
            let p = packetize(
                "cav0",
                k as f64 * 0.125,
                &PlatformPose::new(1.0, 1.0, 0.0, 0.0),
                PoseUncertainty::Localized(&models),
                &[],
            )
            .unwrap();
            out = g.step(k as f64 * 0.125, &[p]).unwrap();
        }
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn two_platforms_shrink_covariance() {
        let mut prior = TrackEstimate::from_observation(
            &GaussianEstimate::new(Vec2::new(1.0, 1.0), Mat2::identity() * 0.05),
            &InitialUncertainty::default(),
        );
        prior.state = KinematicState::new(1.0, 1.0, 0.0, 0.0, 0.0);
        let z = GaussianEstimate::new(Vec2::new(1.02, 0.99), Mat2::identity() * 0.01);
        let one = ekf_update(&prior, &z).unwrap();
        let two = ekf_update(
            &one,
            &GaussianEstimate::new(Vec2::new(0.98, 1.01), Mat2::identity() * 0.01),
        )
        .unwrap();
        // two-measurement oracle for isotropic blocks: 1/(1/0.05 + 2/0.01)
        assert_relative_eq!(two.position_covariance()[(0, 0)], 1.0 / (20.0 + 200.0), epsilon = 1e-12);

        let mut g = GlobalFusion::new(GlobalFusionConfig::default(), statics(&["a", "b"])).unwrap();
        let obj = Vec2::new(1.0, 1.0);
        let mut out = Vec::new();
        for k in 0..6 {
            let t = k as f64 * 0.125;
            out = g
                .step(t, &[cis_packet("a", t, obj, 0.01), cis_packet("b", t, obj, 0.01)])
                .unwrap();
        }
        assert_eq!(out.len(), 1);
        assert!(out[0].estimate.position_covariance().trace() < 0.02);
        assert_eq!(out[0].platforms.len(), 2);
    }

    #[test]
    fn fused_mean_leans_toward_the_tighter_source() {
        let mut g = GlobalFusion::new(GlobalFusionConfig::default(), statics(&["cis", "cav"])).unwrap();
        let cis_obs = Vec2::new(1.0, 0.0);
        let cav_obs = Vec2::new(1.1, 0.0);
        let mut out = Vec::new();
        for k in 0..10 {
            let t = k as f64 * 0.125;
            out = g
                .step(
                    t,
                    &[
                        cis_packet("cis", t, cis_obs, 0.002),
                        cis_packet("cav", t, cav_obs, 0.02),
                    ],
                )
                .unwrap();
        }
        let x = out[0].estimate.state.x;
        // Static weighted-mean oracle: (x1/r1 + x2/r2) / (1/r1 + 1/r2).
        let oracle = (1.0 / 0.002 + 1.1 / 0.02) / (1.0 / 0.002 + 1.0 / 0.02);
        assert!((x - cis_obs.x).abs() < (x - cav_obs.x).abs());
        assert!((x - oracle).abs() < 0.01, "{x} vs {oracle}");
    }

    #[test]
    fn inbox_buckets_dedups_and_drops_late() {
        let inbox = PacketInbox::new(0.125);
        let mk = |id: &str, t: f64| cis_packet(id, t, Vec2::new(1.0, 0.0), 0.01);
        assert!(inbox.submit(mk("b", 0.125)));
        assert!(inbox.submit(mk("a", 0.125)));
        let mut newer = mk("a", 0.126);
        newer.tracks.clear();
        assert!(inbox.submit(newer));
        assert!(inbox.submit(mk("a", 0.1251)));
        let got = inbox.drain(1);
        assert_eq!(
            got.iter().map(|p| p.platform_id.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(got[0].timestamp, 0.126);
        assert!(!inbox.submit(mk("a", 0.125)));
        assert_eq!(inbox.stats(), InboxStats { duplicates: 2, late: 1 });
    }

    #[test]
    fn inbox_accepts_concurrent_submitters() {
        let inbox = PacketInbox::new(0.125);
        std::thread::scope(|s| {
            for i in 0..8 {
                let inbox = &inbox;
                s.spawn(move || {
                    for k in 0..50 {
                        inbox.submit(cis_packet(
                            &format!("p{i}"),
                            k as f64 * 0.125,
                            Vec2::new(1.0, 0.0),
                            0.01,
                        ));
                    }
                });
            }
        });
        for k in 0..50 {
            assert_eq!(inbox.drain(k).len(), 8);
        }
    }

    #[test]
    fn stale_ticks_are_rejected_and_the_latest_duplicate_wins() {
        let cfg = GlobalFusionConfig {
            association: AssociationConfig {
                confirm_threshold: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut g = GlobalFusion::new(cfg, statics(&["a"])).unwrap();
        let old = cis_packet("a", -0.01, Vec2::new(1.0, 0.0), 0.01);
        let new = cis_packet("a", 0.0, Vec2::new(3.0, 0.0), 0.01);
        let tracks = g.step(0.0, &[new.clone(), old]).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].estimate.state.position(), Vec2::new(3.0, 0.0));
        assert!(matches!(g.step(0.0, &[new]), Err(GlobalFusionError::StaleTick { .. })));
    }
}
