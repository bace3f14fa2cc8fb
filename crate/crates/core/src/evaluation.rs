//! End-to-end runs: simulate a scenario, fuse locally on every platform and
//! globally at the road side unit, match confirmed global tracks to truth
//! and report position RMSE next to the raw localizer RMSE.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::gnn_match;
use crate::error_models::{ModelError, ModelSet, PlatformPose};
use crate::geometry::{Mat2, Vec2};
use crate::global_fusion::{
    packetize, GlobalFusion, GlobalFusionConfig, GlobalFusionError, GlobalTrack, PacketInbox, PlatformPacket,
    PoseUncertainty,
};
use crate::local_fusion::{LocalFusion, LocalFusionConfig, LocalFusionError, SensorPipelineConfig};
use crate::simulator::{
    cav_id, CavTruth, PlatformInfo, PlatformTick, ScenarioConfig, SensorKind, SensorSpec, SimulatorError, TickRecord,
    World,
};
use crate::tracking::ProcessNoiseConfig;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorModelMode {
    Parameterized,
    Fixed,
}

impl ErrorModelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Parameterized => "parameterized",
            Self::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for ErrorModelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "parameterized" => Ok(Self::Parameterized),
            "fixed" => Ok(Self::Fixed),
            other => Err(format!(
                "unknown error model mode {other:?} (expected parameterized or fixed)"
            )),
        }
    }
}

fn default_parameterized() -> ModelSet {
    ModelSet::table_iv_parameterized()
}

fn default_fixed() -> ModelSet {
    ModelSet::table_iv_fixed()
}

fn default_max_dist() -> f64 {
    0.5
}

/// Process noise matched to the simulated traffic: accelerations up to
/// 1 m/s^2 and yaw rate steps of v/r where arcs meet straights.
pub fn scenario_process_noise() -> ProcessNoiseConfig {
    ProcessNoiseConfig {
        sigma_ax: 1.0,
        sigma_ay: 1.0,
        sigma_a: 1.0,
        sigma_psi_dot: 2.0,
        ..ProcessNoiseConfig::default()
    }
}

fn default_local() -> LocalFusionConfig {
    LocalFusionConfig {
        process_noise: scenario_process_noise(),
        ..LocalFusionConfig::default()
    }
}

fn default_global() -> GlobalFusionConfig {
    GlobalFusionConfig {
        process_noise: scenario_process_noise(),
        ..GlobalFusionConfig::default()
    }
}

/// Fusion-side settings: trackers and the models each mode feeds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSettings {
    #[serde(default = "default_local")]
    pub local: LocalFusionConfig,
    #[serde(default = "default_global")]
    pub global: GlobalFusionConfig,
    #[serde(default = "default_parameterized")]
    pub parameterized_models: ModelSet,
    #[serde(default = "default_fixed")]
    pub fixed_models: ModelSet,
    /// Gate for matching fused tracks to truth, meters.
    #[serde(default = "default_max_dist")]
    pub match_max_dist: f64,
}

impl Default for FusionSettings {
    fn default() -> Self {
        Self {
            local: default_local(),
            global: default_global(),
            parameterized_models: default_parameterized(),
            fixed_models: default_fixed(),
            match_max_dist: default_max_dist(),
        }
    }
}

impl FusionSettings {
    pub fn models(&self, mode: ErrorModelMode) -> &ModelSet {
        match mode {
            ErrorModelMode::Parameterized => &self.parameterized_models,
            ErrorModelMode::Fixed => &self.fixed_models,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Config(#[from] SimulatorError),
    #[error("scenario {scenario}, platform {platform}, t={t}: {source}")]
    Local {
        scenario: String,
        platform: String,
        t: f64,
        source: LocalFusionError,
    },
    #[error("scenario {scenario}, t={t}: {source}")]
    Global {
        scenario: String,
        t: f64,
        source: GlobalFusionError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("rmse of an empty set")]
    Empty,
    #[error("log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("log schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EvaluationError {
    /// Whether the failure comes from the inputs rather than from fusion.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Log { .. } | Self::SchemaVersion { .. } | Self::Io(_)
        )
    }
}

/// Root mean square Euclidean distance between estimate / truth pairs.
pub fn rmse(pairs: &[(Vec2, Vec2)]) -> Result<f64, EvaluationError> {
    if pairs.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let sum: f64 = pairs.iter().map(|(e, t)| (e - t).norm_squared()).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

pub fn pipelines_for(specs: &[SensorSpec], models: &ModelSet) -> Vec<SensorPipelineConfig> {
    specs
        .iter()
        .map(|s| {
            let m = match s.kind {
                SensorKind::Camera => models.camera(),
                SensorKind::Lidar => models.lidar(),
            };
            SensorPipelineConfig {
                name: s.name.clone(),
                pose: s.pose,
                fov: s.fov,
                max_range: s.max_range,
                rate: s.rate,
                distal_model: m.distal,
                perp_model: m.perpendicular,
            }
        })
        .collect()
}

/// Local fusion on every platform feeding one global fusion instance.
pub struct FusionPipeline {
    scenario: String,
    models: ModelSet,
    locals: Vec<(PlatformInfo, LocalFusion)>,
    global: GlobalFusion,
    inbox: PacketInbox,
    survey_covariance: Mat2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub packets: Vec<PlatformPacket>,
    pub global_tracks: Vec<GlobalTrack>,
}

impl FusionPipeline {
    pub fn new(
        config: &ScenarioConfig,
        platforms: &[PlatformInfo],
        mode: ErrorModelMode,
    ) -> Result<Self, EvaluationError> {
        let models = config.fusion.models(mode).clone();
        models.validate()?;
        let mut locals = Vec::with_capacity(platforms.len());
        for p in platforms {
            let fusion =
                LocalFusion::new(pipelines_for(&p.sensors, &models), config.fusion.local).map_err(|source| {
                    EvaluationError::Local {
                        scenario: config.name.clone(),
                        platform: p.id.clone(),
                        t: 0.0,
                        source,
                    }
                })?;
            locals.push((p.clone(), fusion));
        }
        let statics: BTreeSet<String> = platforms.iter().filter(|p| p.is_static).map(|p| p.id.clone()).collect();
        let global = GlobalFusion::new(config.fusion.global, statics).map_err(|source| EvaluationError::Global {
            scenario: config.name.clone(),
            t: 0.0,
            source,
        })?;
        Ok(Self {
            scenario: config.name.clone(),
            models,
            locals,
            global,
            inbox: PacketInbox::new(config.dt()),
            survey_covariance: Mat2::identity() * config.world.cis_pose_variance,
        })
    }

    pub fn process(&mut self, record: &TickRecord) -> Result<TickOutput, EvaluationError> {
        let localizer = self.models.localizer();
        for ((info, fusion), tick) in self.locals.iter_mut().zip(&record.platforms) {
            debug_assert_eq!(info.id, tick.platform_id);
            let tracks = fusion.step(&tick.frame).map_err(|source| EvaluationError::Local {
                scenario: self.scenario.clone(),
                platform: info.id.clone(),
                t: record.t,
                source,
            })?;
            let uncertainty = if info.is_static {
                PoseUncertainty::Surveyed(self.survey_covariance)
            } else {
                PoseUncertainty::Localized(&localizer)
            };
            let packet = packetize(&info.id, record.t, &tick.pose, uncertainty, &tracks)?;
            self.inbox.submit(packet);
        }
        let packets = self.inbox.drain(self.inbox.tick_of(record.t));
        let global_tracks = self
            .global
            .step(record.t, &packets)
            .map_err(|source| EvaluationError::Global {
                scenario: self.scenario.clone(),
                t: record.t,
                source,
            })?;
        Ok(TickOutput { packets, global_tracks })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub tick: u64,
    pub vehicle: String,
    pub track_id: u64,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSummary {
    pub tick: u64,
    pub t: f64,
    pub confirmed_tracks: usize,
    pub matched: usize,
    pub false_tracks: usize,
    pub missed_vehicles: usize,
    pub squared_error_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: u64,
    pub matches: u64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: ErrorModelMode,
    pub rmse_global: f64,
    pub rmse_localization_alone: f64,
    pub ticks: u64,
    pub matched: u64,
    pub false_tracks: u64,
    pub missed_vehicles: u64,
    pub distinct_tracks: u64,
    pub late_packets: u64,
    pub duplicate_packets: u64,
    pub per_tick: Vec<TickSummary>,
    pub per_track: Vec<TrackSummary>,
    pub residuals: Vec<Residual>,
}

/// Streams the records of a run as newline-delimited JSON.
pub struct LogWriter<W: Write> {
    out: W,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogRecord {
    Header {
        schema_version: u32,
        mode: ErrorModelMode,
        config: Box<ScenarioConfig>,
        platforms: Vec<PlatformInfo>,
    },
    Truth {
        t: f64,
        tick: u64,
        cavs: Vec<CavTruth>,
    },
    Loc {
        t: f64,
        tick: u64,
        platform_id: String,
        pose: PlatformPose,
    },
    Obs {
        t: f64,
        tick: u64,
        platform_id: String,
        frame: crate::local_fusion::LocalFrame,
    },
    Packet {
        t: f64,
        tick: u64,
        packet: PlatformPacket,
    },
    End {
        ticks: u64,
    },
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    fn write(&mut self, r: &LogRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        self.out.write_all(b"\n")
    }

    fn header(
        &mut self,
        config: &ScenarioConfig,
        mode: ErrorModelMode,
        platforms: &[PlatformInfo],
    ) -> std::io::Result<()> {
        self.write(&LogRecord::Header {
            schema_version: LOG_SCHEMA_VERSION,
            mode,
            config: Box::new(config.clone()),
            platforms: platforms.to_vec(),
        })
    }

    fn tick(&mut self, r: &TickRecord, packets: &[PlatformPacket]) -> std::io::Result<()> {
        self.write(&LogRecord::Truth {
            t: r.t,
            tick: r.tick,
            cavs: r.truth.clone(),
        })?;
        for p in &r.platforms {
            self.write(&LogRecord::Loc {
                t: r.t,
                tick: r.tick,
                platform_id: p.platform_id.clone(),
                pose: p.pose,
            })?;
            self.write(&LogRecord::Obs {
                t: r.t,
                tick: r.tick,
                platform_id: p.platform_id.clone(),
                frame: p.frame.clone(),
            })?;
        }
        for p in packets {
            self.write(&LogRecord::Packet {
                t: r.t,
                tick: r.tick,
                packet: p.clone(),
            })?;
        }
        Ok(())
    }

    fn end(&mut self, ticks: u64) -> std::io::Result<()> {
        self.write(&LogRecord::End { ticks })?;
        self.out.flush()
    }
}

/// A parsed log: configuration, platforms and the per-tick records.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: ScenarioConfig,
    pub mode: ErrorModelMode,
    pub platforms: Vec<PlatformInfo>,
    pub records: Vec<TickRecord>,
}

pub fn read_log<R: BufRead>(input: R) -> Result<RunLog, EvaluationError> {
    let mut header: Option<(ScenarioConfig, ErrorModelMode, Vec<PlatformInfo>)> = None;
    let mut records: Vec<TickRecord> = Vec::new();
    let mut ended = false;
    let mut line_no = 0;
    for line in input.lines() {
        line_no += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvaluationError::Log { line: line_no, message };
        if ended {
            return Err(err("data after end record".into()));
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if value.get("kind").and_then(|k| k.as_str()) == Some("header") {
            let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
            if found != LOG_SCHEMA_VERSION {
                return Err(EvaluationError::SchemaVersion {
                    found,
                    expected: LOG_SCHEMA_VERSION,
                });
            }
        }
        let record: LogRecord = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        match record {
            LogRecord::Header {
                mode,
                config,
                platforms,
                ..
            } => {
                if header.is_some() {
                    return Err(err("second header".into()));
                }
                header = Some((*config, mode, platforms));
            }
            _ if header.is_none() => return Err(err("record before header".into())),
            LogRecord::Truth { t, tick, cavs } => {
                if tick != records.len() as u64 {
                    return Err(err(format!("expected tick {}, found {tick}", records.len())));
                }
                records.push(TickRecord {
                    tick,
                    t,
                    truth: cavs,
                    platforms: Vec::new(),
                });
            }
            LogRecord::Loc {
                tick,
                platform_id,
                pose,
                ..
            } => {
                let r = current(&mut records, tick).ok_or_else(|| err("loc record outside its tick".into()))?;
                r.platforms.push(PlatformTick {
                    platform_id,
                    pose,
                    frame: Default::default(),
                });
            }
            LogRecord::Obs {
                tick,
                platform_id,
                frame,
                ..
            } => {
                let r = current(&mut records, tick).ok_or_else(|| err("obs record outside its tick".into()))?;
                match r.platforms.last_mut() {
                    Some(p) if p.platform_id == platform_id => p.frame = frame,
                    _ => return Err(err(format!("obs for {platform_id} without a preceding loc"))),
                }
            }
            LogRecord::Packet { .. } => {}
            LogRecord::End { ticks } => {
                if ticks != records.len() as u64 {
                    return Err(err(format!(
                        "end record claims {ticks} ticks, log holds {}",
                        records.len()
                    )));
                }
                ended = true;
            }
        }
    }
    let (config, mode, platforms) = header.ok_or(EvaluationError::Log {
        line: line_no.max(1),
        message: "missing header".into(),
    })?;
    if !ended {
        return Err(EvaluationError::Log {
            line: line_no + 1,
            message: "log is truncated (no end record)".into(),
        });
    }
    for r in &records {
        if r.platforms.len() != platforms.len() {
            return Err(EvaluationError::Log {
                line: line_no,
                message: format!(
                    "tick {} holds {} platforms, expected {}",
                    r.tick,
                    r.platforms.len(),
                    platforms.len()
                ),
            });
        }
    }
    Ok(RunLog {
        config,
        mode,
        platforms,
        records,
    })
}

fn current(records: &mut [TickRecord], tick: u64) -> Option<&mut TickRecord> {
    records.last_mut().filter(|r| r.tick == tick)
}

/// Runs the simulator to completion.
pub fn simulate(config: &ScenarioConfig) -> Result<(Vec<PlatformInfo>, Vec<TickRecord>), EvaluationError> {
    let mut world = World::new(config.clone())?;
    let platforms = world.platforms();
    let mut records = Vec::with_capacity(config.tick_count() as usize);
    while !world.is_finished() {
        records.push(world.step()?);
    }
    Ok((platforms, records))
}

/// Fuses recorded ticks under `mode` and scores the result. When `log` is
/// given every tick (and the packets fusion produced) is written to it.
pub fn evaluate_records<W: Write>(
    config: &ScenarioConfig,
    platforms: &[PlatformInfo],
    records: &[TickRecord],
    mode: ErrorModelMode,
    mut log: Option<&mut LogWriter<W>>,
) -> Result<RunReport, EvaluationError> {
    let mut pipeline = FusionPipeline::new(config, platforms, mode)?;
    if let Some(l) = log.as_deref_mut() {
        l.header(config, mode, platforms)?;
    }
    let cav_count = config.cav_count;
    let mut per_tick = Vec::with_capacity(records.len());
    let mut residuals = Vec::new();
    let mut global_pairs: Vec<(Vec2, Vec2)> = Vec::new();
    let mut loc_pairs: Vec<(Vec2, Vec2)> = Vec::new();
    let mut track_errors: BTreeMap<u64, (u64, f64)> = BTreeMap::new();
    let (mut false_tracks, mut missed) = (0u64, 0u64);

    for r in records {
        let out = pipeline.process(r)?;
        if let Some(l) = log.as_deref_mut() {
            l.tick(r, &out.packets)?;
        }
        for (i, truth) in r.truth.iter().enumerate().take(cav_count) {
            loc_pairs.push((r.platforms[i].pose.position(), truth.position()));
        }
        let est: Vec<Vec2> = out.global_tracks.iter().map(|t| t.estimate.state.position()).collect();
        let truth: Vec<Vec2> = r.truth.iter().map(|c| c.position()).collect();
        let matches = gnn_match(&est, &truth, config.fusion.match_max_dist);
        let mut sq = 0.0;
        for &(ei, ti, _) in &matches {
            let d = est[ei] - truth[ti];
            sq += d.norm_squared();
            global_pairs.push((est[ei], truth[ti]));
            let id = out.global_tracks[ei].id;
            let e = track_errors.entry(id).or_default();
            e.0 += 1;
            e.1 += d.norm_squared();
            residuals.push(Residual {
                tick: r.tick,
                vehicle: cav_id(ti),
                track_id: id,
                dx: d.x,
                dy: d.y,
            });
        }
        let ft = est.len() - matches.len();
        let mv = truth.len() - matches.len();
        false_tracks += ft as u64;
        missed += mv as u64;
        per_tick.push(TickSummary {
            tick: r.tick,
            t: r.t,
            confirmed_tracks: est.len(),
            matched: matches.len(),
            false_tracks: ft,
            missed_vehicles: mv,
            squared_error_sum: sq,
        });
    }
    if let Some(l) = log {
        l.end(records.len() as u64)?;
    }
    let stats = pipeline.inbox.stats();
    Ok(RunReport {
        scenario: config.name.clone(),
        seed: config.seed,
        mode,
        rmse_global: rmse(&global_pairs)?,
        rmse_localization_alone: if cav_count == 0 { 0.0 } else { rmse(&loc_pairs)? },
        ticks: records.len() as u64,
        matched: global_pairs.len() as u64,
        false_tracks,
        missed_vehicles: missed,
        distinct_tracks: track_errors.len() as u64,
        late_packets: stats.late,
        duplicate_packets: stats.duplicates,
        per_tick,
        per_track: track_errors
            .into_iter()
            .map(|(track_id, (n, sq))| TrackSummary {
                track_id,
                matches: n,
                rmse: (sq / n as f64).sqrt(),
            })
            .collect(),
        residuals,
    })
}

pub fn run_scenario(config: &ScenarioConfig, mode: ErrorModelMode) -> Result<RunReport, EvaluationError> {
    let (platforms, records) = simulate(config)?;
    evaluate_records::<std::io::Sink>(config, &platforms, &records, mode, None)
}

/// [`run_scenario`] that also writes the run's log.
pub fn run_scenario_logged<W: Write>(
    config: &ScenarioConfig,
    mode: ErrorModelMode,
    log: W,
) -> Result<RunReport, EvaluationError> {
    let (platforms, records) = simulate(config)?;
    let mut writer = LogWriter::new(log);
    evaluate_records(config, &platforms, &records, mode, Some(&mut writer))
}

/// Re-runs fusion from a log under `mode`.
pub fn replay<R: BufRead>(log: R, mode: ErrorModelMode) -> Result<RunReport, EvaluationError> {
    let run = read_log(log)?;
    evaluate_records::<std::io::Sink>(&run.config, &run.platforms, &run.records, mode, None)
}

/// Both modes on each configuration, configurations spread over threads.
/// Each scenario is simulated once and both modes fuse the same records.
pub fn run_suite(configs: &[ScenarioConfig], threads: usize) -> Result<Vec<(RunReport, RunReport)>, EvaluationError> {
    let threads = threads.max(1).min(configs.len().max(1));
    let mut results: Vec<Option<Result<(RunReport, RunReport), EvaluationError>>> =
        (0..configs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = parking_lot::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let c = &configs[i];
                let res = simulate(c).and_then(|(platforms, records)| {
                    let p = evaluate_records::<std::io::Sink>(
                        c,
                        &platforms,
                        &records,
                        ErrorModelMode::Parameterized,
                        None,
                    )?;
                    let f = evaluate_records::<std::io::Sink>(c, &platforms, &records, ErrorModelMode::Fixed, None)?;
                    Ok((p, f))
                });
                slots.lock()[i] = Some(res);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every slot is filled")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub mode: ErrorModelMode,
    pub runs: usize,
    pub rmse: f64,
    pub rmse_min: f64,
    pub rmse_max: f64,
    pub rmse_localization_alone: f64,
    /// Mean fixed-mode RMSE over mean parameterized-mode RMSE for the
    /// scenario; absent unless both modes were run.
    pub ratio: Option<f64>,
}

/// Mean / min / max RMSE per scenario and mode, in first-seen scenario order.
pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(String, ErrorModelMode), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        if !order.contains(&r.scenario) {
            order.push(r.scenario.clone());
        }
        groups.entry((r.scenario.clone(), r.mode)).or_default().push(r);
    }
    let mean = |v: &[&RunReport], f: fn(&RunReport) -> f64| v.iter().map(|r| f(r)).sum::<f64>() / v.len() as f64;
    let mut out = Vec::new();
    for name in order {
        let get = |m| groups.get(&(name.clone(), m));
        let ratio = match (get(ErrorModelMode::Parameterized), get(ErrorModelMode::Fixed)) {
            (Some(p), Some(f)) => Some(mean(f, |r| r.rmse_global) / mean(p, |r| r.rmse_global)),
            _ => None,
        };
        for mode in [ErrorModelMode::Parameterized, ErrorModelMode::Fixed] {
            if let Some(v) = get(mode) {
                out.push(SummaryRow {
                    scenario: name.clone(),
                    mode,
                    runs: v.len(),
                    rmse: mean(v, |r| r.rmse_global),
                    rmse_min: v.iter().map(|r| r.rmse_global).fold(f64::INFINITY, f64::min),
                    rmse_max: v.iter().map(|r| r.rmse_global).fold(f64::NEG_INFINITY, f64::max),
                    rmse_localization_alone: mean(v, |r| r.rmse_localization_alone),
                    ratio,
                });
            }
        }
    }
    out
}
