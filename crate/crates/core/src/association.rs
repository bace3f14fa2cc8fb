//! Joint probabilistic data association (JPDA) and track lifecycle.
//!
//! Association is computed per scan: all observations produced by one
//! source (a sensor pipeline locally, a platform globally) compete for the
//! predicted tracks under the usual JPDA constraints. Scans from different
//! sources are associated against the same predicted tracks, so a track can
//! receive one update per source in a frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_models::{GaussianEstimate, ObjectClass};
use nalgebra::Matrix2;

use crate::tracking::{
    ctrv_predict, ekf_update, innovation, invert_spd2, multi_update, InitialUncertainty, KinematicState, MultiUpdate,
    ProcessNoiseConfig, SourcedEstimate, TrackEstimate, TrackingError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error(
        "JPDA cluster has more than {cap} joint events ({tracks} tracks, {observations} observations); \
         split the cluster or tighten the gate"
    )]
    CombinatorialOverflow {
        cap: u64,
        tracks: usize,
        observations: usize,
    },
    #[error("invalid association config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Chi-square gate on the squared Mahalanobis distance (2 dof).
    pub gate_threshold: f64,
    pub detection_probability: f64,
    /// Expected false alarms per square meter.
    pub clutter_density: f64,
    pub confirm_threshold: u32,
    pub delete_threshold: u32,
    /// Association weights at or below this do not update a track.
    pub min_update_weight: f64,
    pub max_events: u64,
    /// Two tracks whose positions are closer than this squared Mahalanobis
    /// distance (summed position covariances) are merged, keeping the more
    /// established one. Zero disables merging.
    #[serde(default = "default_merge_threshold")]
    pub merge_threshold: f64,
}

fn default_merge_threshold() -> f64 {
    DEFAULT_MERGE_THRESHOLD
}

pub const DEFAULT_MERGE_THRESHOLD: f64 = 4.0;

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            gate_threshold: 9.21,
            detection_probability: 0.9,
            clutter_density: 0.05,
            confirm_threshold: 3,
            delete_threshold: 5,
            min_update_weight: 0.2,
            max_events: 1_000_000,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<(), AssociationError> {
        let bad = |m: &str| Err(AssociationError::InvalidConfig(m.to_string()));
        if !(self.gate_threshold > 0.0) {
            return bad("gate_threshold must be positive");
        }
        if !(self.detection_probability > 0.0 && self.detection_probability <= 1.0) {
            return bad("detection_probability must be in (0, 1]");
        }
        if !(self.clutter_density >= 0.0) {
            return bad("clutter_density must be non-negative");
        }
        if self.confirm_threshold < 1 || self.delete_threshold < 1 {
            return bad("lifecycle thresholds must be at least 1");
        }
        if !(0.0..1.0).contains(&self.min_update_weight) {
            return bad("min_update_weight must be in [0, 1)");
        }
        if self.max_events == 0 {
            return bad("max_events must be positive");
        }
        if !(self.merge_threshold >= 0.0) {
            return bad("merge_threshold must be non-negative");
        }
        Ok(())
    }
}

/// One observation entering association.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub source: String,
    pub estimate: GaussianEstimate,
    pub object_class: ObjectClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub estimate: TrackEstimate,
    pub frames_seen: u32,
    pub frames_missed: u32,
    pub confirmed: bool,
    pub object_class: ObjectClass,
    /// Every source that has updated this track.
    pub sources: BTreeSet<String>,
    /// Time since the single observation that spawned the track, while its
    /// velocity is still unknown. Such a track holds its spawn position and
    /// takes speed and heading from the displacement to its next update.
    pub seed_age: Option<f64>,
    /// Length of the last prediction when the track was slower than the
    /// restart speed, so that its heading carried no information.
    pub restart_window: Option<f64>,
}

impl Track {
    /// Advances the track by `noise.dt`. Unseeded tracks only age.
    pub fn predict(&mut self, noise: &ProcessNoiseConfig, init: &InitialUncertainty) {
        match &mut self.seed_age {
            Some(age) => *age += noise.dt,
            None => {
                self.restart_window = (self.estimate.state.v.abs() < init.restart_speed).then_some(noise.dt);
                self.estimate = ctrv_predict(&self.estimate, noise);
            }
        }
    }

    /// Estimate used for gating and association weights. Where the direction
    /// of travel is unknown the position spreads isotropically with the
    /// speed prior.
    pub fn gating_estimate(&self, init: &InitialUncertainty) -> TrackEstimate {
        let mut est = self.estimate;
        if let Some(age) = self.seed_age.or(self.restart_window) {
            let spread = init.speed_var * age * age;
            est.covariance[(0, 0)] += spread;
            est.covariance[(1, 1)] += spread;
        }
        est
    }
}

/// Monotonic track identifiers, one allocator per fusion instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrackIdAllocator {
    next: u64,
}

impl TrackIdAllocator {
    pub fn next_id(&mut self) -> u64 {
        self.next += 1;
        self.next
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// Probability that track i received none of the observations.
    pub miss: Vec<f64>,
    /// `weights[i][j]`: probability that observation j belongs to track i.
    pub weights: Vec<Vec<f64>>,
    pub gated: Vec<Vec<bool>>,
    /// Observations outside the gate of every track.
    pub unassociated: Vec<usize>,
    pub event_count: u64,
}

fn mahalanobis_sq(track: &TrackEstimate, z: &GaussianEstimate) -> Option<(f64, f64)> {
    let (nu, s) = innovation(track, z);
    let s_inv = invert_spd2(&s)?;
    let d2 = (nu.transpose() * s_inv * nu)[(0, 0)];
    let det = s.determinant();
    Some((d2, det))
}

/// Gaussian innovation likelihood `N(nu; 0, S)`; `None` when S is singular.
pub fn innovation_likelihood(track: &TrackEstimate, z: &GaussianEstimate) -> Option<f64> {
    let (d2, det) = mahalanobis_sq(track, z)?;
    Some((-0.5 * d2).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
}

/// `true` where the observation falls inside the track's validation gate
/// (inclusive). Singular innovation covariances never gate.
pub fn gate(tracks: &[TrackEstimate], observations: &[GaussianEstimate], cfg: &AssociationConfig) -> Vec<Vec<bool>> {
    tracks
        .iter()
        .map(|t| {
            observations
                .iter()
                .map(|z| matches!(mahalanobis_sq(t, z), Some((d2, _)) if d2 <= cfg.gate_threshold))
                .collect()
        })
        .collect()
}

/// Exact JPDA marginals by enumerating every feasible joint event within
/// each independent cluster of gated tracks and observations.
pub fn jpda_weights(
    tracks: &[TrackEstimate],
    observations: &[GaussianEstimate],
    cfg: &AssociationConfig,
) -> Result<AssociationResult, AssociationError> {
    let n_t = tracks.len();
    let n_o = observations.len();
    let gated = gate(tracks, observations, cfg);
    let likelihood: Vec<Vec<f64>> = (0..n_t)
        .map(|i| {
            (0..n_o)
                .map(|j| {
                    if gated[i][j] {
                        innovation_likelihood(&tracks[i], &observations[j]).unwrap_or(0.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut miss = vec![1.0; n_t];
    let mut weights = vec![vec![0.0; n_o]; n_t];
    let mut event_count = 0u64;

    for cluster in clusters(&gated) {
        let mut enumerator = EventEnumerator {
            cluster: &cluster,
            gated: &gated,
            likelihood: &likelihood,
            cfg,
            assignment: vec![None; cluster.tracks.len()],
            used: vec![false; cluster.observations.len()],
            total: 0.0,
            track_sums: vec![0.0; cluster.tracks.len()],
            pair_sums: vec![vec![0.0; cluster.observations.len()]; cluster.tracks.len()],
            events: 0,
        };
        enumerator.recurse(0, 1.0)?;
        event_count += enumerator.events;
        let EventEnumerator {
            total,
            track_sums,
            pair_sums,
            ..
        } = enumerator;
        for (ti, &track) in cluster.tracks.iter().enumerate() {
            if total > 0.0 && total.is_finite() {
                miss[track] = track_sums[ti] / total;
                for (oi, &obs) in cluster.observations.iter().enumerate() {
                    weights[track][obs] = pair_sums[ti][oi] / total;
                }
            }
        }
    }

    let unassociated = (0..n_o).filter(|&j| (0..n_t).all(|i| !gated[i][j])).collect();
    Ok(AssociationResult {
        miss,
        weights,
        gated,
        unassociated,
        event_count,
    })
}

struct Cluster {
    tracks: Vec<usize>,
    observations: Vec<usize>,
}

/// Connected components of the bipartite gating graph that contain at
/// least one track and one observation.
fn clusters(gated: &[Vec<bool>]) -> Vec<Cluster> {
    let n_t = gated.len();
    let n_o = gated.first().map_or(0, Vec::len);
    let mut parent: Vec<usize> = (0..n_t + n_o).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, row) in gated.iter().enumerate() {
        for (j, &g) in row.iter().enumerate() {
            if g {
                let a = find(&mut parent, i);
                let b = find(&mut parent, n_t + j);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut out: Vec<(usize, Cluster)> = Vec::new();
    for node in 0..n_t + n_o {
        let root = find(&mut parent, node);
        let idx = match out.iter().position(|(r, _)| *r == root) {
            Some(idx) => idx,
            None => {
                out.push((
                    root,
                    Cluster {
                        tracks: Vec::new(),
                        observations: Vec::new(),
                    },
                ));
                out.len() - 1
            }
        };
        if node < n_t {
            out[idx].1.tracks.push(node);
        } else {
            out[idx].1.observations.push(node - n_t);
        }
    }
    out.into_iter()
        .map(|(_, c)| c)
        .filter(|c| !c.tracks.is_empty() && !c.observations.is_empty())
        .collect()
}

struct EventEnumerator<'a> {
    cluster: &'a Cluster,
    gated: &'a [Vec<bool>],
    likelihood: &'a [Vec<f64>],
    cfg: &'a AssociationConfig,
    assignment: Vec<Option<usize>>,
    used: Vec<bool>,
    total: f64,
    track_sums: Vec<f64>,
    pair_sums: Vec<Vec<f64>>,
    events: u64,
}

impl EventEnumerator<'_> {
    fn recurse(&mut self, ti: usize, weight: f64) -> Result<(), AssociationError> {
        let pd = self.cfg.detection_probability;
        if ti == self.cluster.tracks.len() {
            self.events += 1;
            if self.events > self.cfg.max_events {
                return Err(AssociationError::CombinatorialOverflow {
                    cap: self.cfg.max_events,
                    tracks: self.cluster.tracks.len(),
                    observations: self.cluster.observations.len(),
                });
            }
            let false_alarms = self.used.iter().filter(|u| !**u).count();
            let w = weight * self.cfg.clutter_density.powi(false_alarms as i32);
            self.total += w;
            for (t, a) in self.assignment.iter().enumerate() {
                match a {
                    Some(o) => self.pair_sums[t][*o] += w,
                    None => self.track_sums[t] += w,
                }
            }
            return Ok(());
        }
        let track = self.cluster.tracks[ti];
        self.assignment[ti] = None;
        self.recurse(ti + 1, weight * (1.0 - pd))?;
        for oi in 0..self.cluster.observations.len() {
            let obs = self.cluster.observations[oi];
            if self.used[oi] || !self.gated[track][obs] {
                continue;
            }
            self.used[oi] = true;
            self.assignment[ti] = Some(oi);
            self.recurse(ti + 1, weight * pd * self.likelihood[track][obs])?;
            self.used[oi] = false;
        }
        self.assignment[ti] = None;
        Ok(())
    }
}

/// What happened to the track list during one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LifecycleReport {
    pub spawned: Vec<u64>,
    pub deleted: Vec<u64>,
    /// (kept, absorbed) track ids.
    pub merged: Vec<(u64, u64)>,
    pub skipped_updates: Vec<(u64, String, TrackingError)>,
}

/// Single-scan form of [`apply_associations`].
pub fn apply_association(
    tracks: Vec<Track>,
    detections: &[Detection],
    result: &AssociationResult,
    cfg: &AssociationConfig,
    ids: &mut TrackIdAllocator,
    init: &InitialUncertainty,
) -> (Vec<Track>, LifecycleReport) {
    apply_associations(tracks, &[(detections, result)], cfg, ids, init)
}

/// Updates every track with its weight-bearing observations from all scans,
/// advances lifecycle counters, deletes stale tracks and spawns tentative
/// tracks from observations no track gated.
///
/// Soft association: an observation of weight w updates a track with its
/// covariance scaled by 1/w, provided w exceeds `min_update_weight`.
pub fn apply_associations(
    tracks: Vec<Track>,
    scans: &[(&[Detection], &AssociationResult)],
    cfg: &AssociationConfig,
    ids: &mut TrackIdAllocator,
    init: &InitialUncertainty,
) -> (Vec<Track>, LifecycleReport) {
    let mut report = LifecycleReport::default();
    let mut out = Vec::with_capacity(tracks.len());
    for (i, mut track) in tracks.into_iter().enumerate() {
        let mut zs = Vec::new();
        for (detections, result) in scans {
            for (j, det) in detections.iter().enumerate() {
                let w = result.weights[i][j];
                if w > cfg.min_update_weight {
                    zs.push(SourcedEstimate {
                        source: det.source.clone(),
                        estimate: GaussianEstimate::new(det.estimate.mean, det.estimate.covariance / w),
                    });
                }
            }
        }
        let updated = match (track.seed_age, track.restart_window) {
            _ if zs.is_empty() => multi_update(&track.estimate, &zs),
            (Some(age), _) => seed_from_displacement(&track.estimate, &zs, age, init, None)
                .unwrap_or_else(|| multi_update(&track.estimate, &zs)),
            (None, Some(window)) => {
                seed_from_displacement(&track.estimate, &zs, window, init, Some(cfg.gate_threshold))
                    .unwrap_or_else(|| multi_update(&track.estimate, &zs))
            }
            (None, None) => multi_update(&track.estimate, &zs),
        };
        let applied = zs.len() - updated.skipped.len();
        if applied > 0 {
            track.seed_age = None;
        }
        for (source, err) in updated.skipped {
            report.skipped_updates.push((track.id, source, err));
        }
        track.estimate = updated.estimate;
        if applied > 0 {
            track.frames_seen += 1;
            track.frames_missed = 0;
            let skipped: BTreeSet<&String> = report
                .skipped_updates
                .iter()
                .filter(|s| s.0 == track.id)
                .map(|s| &s.1)
                .collect();
            for z in &zs {
                if !skipped.contains(&z.source) {
                    track.sources.insert(z.source.clone());
                }
            }
        } else {
            track.frames_missed += 1;
        }
        if track.frames_seen >= cfg.confirm_threshold {
            track.confirmed = true;
        }
        if track.frames_missed >= cfg.delete_threshold {
            report.deleted.push(track.id);
            continue;
        }
        out.push(track);
    }
    merge_duplicates(&mut out, cfg.merge_threshold, &mut report);

    // New tentative tracks; later scans may refine a track spawned earlier in
    // the same frame instead of duplicating it.
    let first_new = out.len();
    for (detections, result) in scans {
        for &j in &result.unassociated {
            let det = &detections[j];
            let existing = out[first_new..].iter_mut().find(|t| {
                !t.sources.contains(&det.source)
                    && matches!(mahalanobis_sq(&t.estimate, &det.estimate), Some((d2, _)) if d2 <= cfg.gate_threshold)
            });
            if let Some(track) = existing {
                if let Ok(est) = ekf_update(&track.estimate, &det.estimate) {
                    track.estimate = est;
                    track.sources.insert(det.source.clone());
                }
                continue;
            }
            let id = ids.next_id();
            report.spawned.push(id);
            out.push(Track {
                id,
                estimate: TrackEstimate::from_observation(&det.estimate, init),
                frames_seen: 1,
                frames_missed: 0,
                confirmed: cfg.confirm_threshold <= 1,
                object_class: det.object_class,
                sources: BTreeSet::from([det.source.clone()]),
                seed_age: Some(0.0),
                restart_window: None,
            });
        }
    }
    (out, report)
}

/// Two-point initialisation: the current observations fix the position,
/// and the displacement from `prior` over `age` gives speed and heading
/// with first-order covariances. With `min_jump` set, returns `None` unless
/// the displacement is significant at that squared Mahalanobis distance.
fn seed_from_displacement(
    prior: &TrackEstimate,
    zs: &[SourcedEstimate],
    age: f64,
    init: &InitialUncertainty,
    min_jump: Option<f64>,
) -> Option<MultiUpdate> {
    let mut order: Vec<&SourcedEstimate> = zs.iter().collect();
    order.sort_by(|a, b| a.source.cmp(&b.source));
    let mut skipped = Vec::new();
    let mut fused: Option<TrackEstimate> = None;
    for z in order {
        match &fused {
            None => fused = Some(TrackEstimate::from_observation(&z.estimate, init)),
            Some(est) => match ekf_update(est, &z.estimate) {
                Ok(next) => fused = Some(next),
                Err(e) => skipped.push((z.source.clone(), e)),
            },
        }
    }
    let fused = fused?;
    let p1 = fused.position_covariance();
    let cov_d = prior.position_covariance() + p1;
    let d = fused.state.position() - prior.state.position();
    if let Some(threshold) = min_jump {
        let jump = invert_spd2(&cov_d).map(|inv| (d.transpose() * inv * d)[(0, 0)])?;
        if jump <= threshold {
            return None;
        }
    }
    let dist = d.norm();
    if age <= 0.0 || dist <= 1e-12 {
        return Some(MultiUpdate {
            estimate: fused,
            skipped,
        });
    }
    let u = d / dist;
    // Rows: d(speed)/d(d) and d(heading)/d(d).
    let j = Matrix2::new(u.x, u.y, -u.y / dist, u.x / dist) / age;
    let mut vel_cov = j * cov_d * j.transpose();
    let mut cross: Matrix2<f64> = p1 * j.transpose();
    if vel_cov[(1, 1)] > init.heading_var {
        // Displacement within the noise: heading stays uninformative.
        vel_cov[(1, 1)] = init.heading_var;
        vel_cov[(0, 1)] = 0.0;
        vel_cov[(1, 0)] = 0.0;
        cross.set_column(1, &nalgebra::Vector2::zeros());
    }
    let mut est = fused;
    est.state = KinematicState::new(fused.state.x, fused.state.y, dist / age, d.y.atan2(d.x), 0.0);
    est.covariance.fixed_view_mut::<2, 2>(2, 2).copy_from(&vel_cov);
    est.covariance.fixed_view_mut::<2, 2>(0, 2).copy_from(&cross);
    est.covariance
        .fixed_view_mut::<2, 2>(2, 0)
        .copy_from(&cross.transpose());
    Some(MultiUpdate { estimate: est, skipped })
}

/// Drops tracks that sit on top of a more established track. JPDA splits
/// the weight of an object between two such tracks, so without this both
/// would survive indefinitely, each updated with half the information.
fn merge_duplicates(tracks: &mut Vec<Track>, threshold: f64, report: &mut LifecycleReport) {
    if threshold <= 0.0 || tracks.len() < 2 {
        return;
    }
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&tracks[a], &tracks[b]);
        tb.confirmed
            .cmp(&ta.confirmed)
            .then(tb.frames_seen.cmp(&ta.frames_seen))
            .then(ta.id.cmp(&tb.id))
    });
    let mut absorbed = vec![false; tracks.len()];
    for (k, &i) in order.iter().enumerate() {
        if absorbed[i] {
            continue;
        }
        for &j in &order[k + 1..] {
            if absorbed[j] {
                continue;
            }
            let d = tracks[i].estimate.state.position() - tracks[j].estimate.state.position();
            let s = tracks[i].estimate.position_covariance() + tracks[j].estimate.position_covariance();
            let close = invert_spd2(&s).is_some_and(|inv| (d.transpose() * inv * d)[(0, 0)] <= threshold);
            if close {
                absorbed[j] = true;
                report.merged.push((tracks[i].id, tracks[j].id));
                let sources = tracks[j].sources.clone();
                tracks[i].sources.extend(sources);
            }
        }
    }
    let mut k = 0;
    tracks.retain(|_| {
        k += 1;
        !absorbed[k - 1]
    });
}
