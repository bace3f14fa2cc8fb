//! `coopfuse`: run scenarios, replay logs, fit error models and tabulate
//! results.
//!
//! Exit status is 0 on success, 2 when the inputs are at fault (unreadable
//! or invalid config, log, samples) and 3 when fusion or fitting fails.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use coopfuse::calibration::{
    component_kind, fit_components, fit_error_model, fit_quality, CalibrationError, ErrorSample, SampleRecord,
};
use coopfuse::error_models::ModelSet;
use coopfuse::evaluation::{
    replay, run_scenario_logged, run_suite, summarize, ErrorModelMode, EvaluationError, RunReport,
};
use coopfuse::simulator::{calibration_samples, SampleDesign, ScenarioConfig, TABLE_II_SCENARIOS};

#[derive(Parser)]
#[command(
    name = "coopfuse",
    version,
    about = "Cooperative perception fusion simulator and evaluator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario, fuse it and write its log and report.
    Simulate {
        /// Scenario config (JSON).
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        /// A standard scenario by name instead of a config file, e.g. lg/sp/CIS.
        #[arg(long)]
        scenario: Option<String>,
        /// Seed for `--scenario`.
        #[arg(long, default_value_t = 1, requires = "scenario")]
        seed: u64,
        #[arg(long, default_value = "parameterized")]
        mode: ErrorModelMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run fusion from a log and print the report.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "parameterized")]
        mode: ErrorModelMode,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one error model per component from a sample CSV
    /// (columns predictor,error,component,source).
    Fit {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw calibration samples from a model set through the simulator.
    Samples {
        /// Model set (JSON); the built-in parameterized set when omitted.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Samples per component.
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every standard scenario in both modes and write the reports.
    Suite {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Run length in seconds.
        #[arg(long, default_value_t = 120.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the reports in a directory: summary.csv plus one residual
    /// CSV per scenario.
    Report {
        #[arg(long)]
        runs: PathBuf,
    },
}

/// Error with the exit status it maps to.
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => e,
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

impl From<EvaluationError> for Failure {
    fn from(e: EvaluationError) -> Self {
        if e.is_config_error() {
            Failure::Input(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::InvalidSample { .. } | CalibrationError::InsufficientSamples { .. } => {
                Failure::Input(e.into())
            }
            _ => Failure::Runtime(e.into()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            scenario,
            seed,
            mode,
            out,
        } => {
            let config = match (config, scenario) {
                (Some(path), _) => load_config(&path)?,
                (None, Some(name)) => ScenarioConfig::table_ii(&name, seed).ok_or_else(|| {
                    input(anyhow!(
                        "unknown scenario {name:?}; expected one of {}",
                        TABLE_II_SCENARIOS.join(", ")
                    ))
                })?,
                (None, None) => unreachable!("clap requires one of --config / --scenario"),
            };
            simulate(&config, mode, &out)
        }
        Command::Replay { log, mode, out } => {
            let file = File::open(&log)
                .with_context(|| format!("opening {}", log.display()))
                .map_err(input)?;
            let report = replay(BufReader::new(file), mode)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?;
            match out {
                Some(path) => fs::write(&path, json + "\n")
                    .with_context(|| format!("writing {}", path.display()))
                    .map_err(input)?,
                None => print_stdout(&(json + "\n"))?,
            }
            Ok(())
        }
        Command::Fit { samples, degree, out } => fit(&samples, degree, &out),
        Command::Samples { models, n, seed, out } => {
            let models = match models {
                Some(path) => read_models(&path)?,
                None => ModelSet::table_iv_parameterized(),
            };
            let records = calibration_samples(&models, &SampleDesign::default(), n, seed).map_err(input)?;
            let mut w = csv::Writer::from_path(&out)
                .with_context(|| format!("creating {}", out.display()))
                .map_err(input)?;
            for r in &records {
                w.serialize(r).map_err(input)?;
            }
            w.flush().map_err(input)?;
            println!("wrote {} samples to {}", records.len(), out.display());
            Ok(())
        }
        Command::Suite {
            seeds,
            duration,
            threads,
            out,
        } => suite(seeds, duration, threads, &out),
        Command::Report { runs } => report(&runs),
    }
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn print_stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(input),
    }
}

fn read_models(path: &Path) -> Result<ModelSet> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading model file {}", path.display()))
        .map_err(input)?;
    let models: ModelSet = serde_json::from_str(&text)
        .with_context(|| format!("parsing model file {}", path.display()))
        .map_err(input)?;
    models.validate().map_err(input)?;
    Ok(models)
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(input)?;
    let mut config: ScenarioConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(input)?;
    if let Some(file) = config.model_file.take() {
        let base = path.parent().unwrap_or(Path::new("."));
        config.fusion.parameterized_models = read_models(&base.join(file))?;
    }
    config.validate().map_err(input)?;
    Ok(config)
}

/// File stem for a run: scenario name with slashes flattened, seed, mode.
fn run_stem(scenario: &str, seed: u64, mode: ErrorModelMode) -> String {
    format!("{}-s{seed}-{}", scenario.replace('/', "_"), mode.as_str())
}

fn write_report(dir: &Path, report: &RunReport) -> Result<PathBuf> {
    let path = dir.join(format!(
        "{}.report.json",
        run_stem(&report.scenario, report.seed, report.mode)
    ));
    let json = serde_json::to_string_pretty(report).map_err(|e| Failure::Runtime(e.into()))?;
    fs::write(&path, json + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(input)?;
    Ok(path)
}

fn simulate(config: &ScenarioConfig, mode: ErrorModelMode, out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(input)?;
    let log_path = out.join(format!("{}.ndjson", run_stem(&config.name, config.seed, mode)));
    let file = File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))
        .map_err(input)?;
    let mut writer = BufWriter::new(file);
    let report = run_scenario_logged(config, mode, &mut writer)?;
    writer.flush().map_err(input)?;
    let report_path = write_report(out, &report)?;
    println!(
        "{} seed {} {}: rmse {:.4} m, localization alone {:.4} m",
        report.scenario,
        report.seed,
        mode.as_str(),
        report.rmse_global,
        report.rmse_localization_alone
    );
    println!("log {}\nreport {}", log_path.display(), report_path.display());
    Ok(())
}

fn fit(samples: &Path, degree: usize, out: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(samples)
        .with_context(|| format!("opening {}", samples.display()))
        .map_err(input)?;
    let mut records: Vec<SampleRecord> = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        // Header is line 1.
        records.push(
            row.with_context(|| format!("{} line {}", samples.display(), i + 2))
                .map_err(input)?,
        );
    }
    if records.is_empty() {
        return Err(input(anyhow!("{} has no samples", samples.display())));
    }
    let fitted = fit_components(&records, degree)?;
    for (component, model) in &fitted {
        let group: Vec<ErrorSample> = records
            .iter()
            .filter(|r| &r.component == component)
            .map(|r| ErrorSample::new(r.predictor, r.error))
            .collect();
        let mean_abs = fit_error_model(&group, degree, component_kind(component))?;
        let r2 = fit_quality(&group, &mean_abs).map_or("undefined".to_string(), |r| format!("{r:.3}"));
        println!(
            "{component}: sigma coefficients {:?} from {} samples, R^2 of |error| fit {r2}",
            model.coefficients,
            group.len()
        );
    }
    let json = serde_json::to_string_pretty(&fitted).map_err(|e| Failure::Runtime(e.into()))?;
    fs::write(out, json + "\n")
        .with_context(|| format!("writing {}", out.display()))
        .map_err(input)?;
    if fitted.len() < 6 {
        eprintln!(
            "note: {} of 6 components present; the output is not a complete model set",
            fitted.len()
        );
    }
    Ok(())
}

fn suite(seeds: u64, duration: f64, threads: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(input)?;
    let configs: Vec<ScenarioConfig> = TABLE_II_SCENARIOS
        .iter()
        .flat_map(|name| {
            (1..=seeds).map(move |seed| {
                let mut c = ScenarioConfig::table_ii(name, seed).expect("standard scenario");
                c.duration = duration;
                c
            })
        })
        .collect();
    let threads = if threads == 0 {
        std::thread::available_parallelism().map_or(4, |n| n.get())
    } else {
        threads
    };
    for (p, f) in run_suite(&configs, threads)? {
        write_report(out, &p)?;
        write_report(out, &f)?;
    }
    report(out)
}

fn report(runs: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(runs)
        .with_context(|| format!("reading {}", runs.display()))
        .map_err(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".report.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(input(anyhow!("no *.report.json files in {}", runs.display())));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(input)?;
        let r: RunReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", p.display()))
            .map_err(input)?;
        reports.push(r);
    }

    let summary_path = runs.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)
        .with_context(|| format!("creating {}", summary_path.display()))
        .map_err(input)?;
    w.write_record([
        "scenario",
        "mode",
        "runs",
        "rmse",
        "rmse_min",
        "rmse_max",
        "rmse_localization_alone",
        "ratio",
    ])
    .map_err(input)?;
    println!("scenario,mode,rmse,ratio");
    for row in summarize(&reports) {
        let ratio = row.ratio.map_or(String::new(), |r| format!("{r:.4}"));
        w.write_record([
            row.scenario.clone(),
            row.mode.as_str().to_string(),
            row.runs.to_string(),
            format!("{:.6}", row.rmse),
            format!("{:.6}", row.rmse_min),
            format!("{:.6}", row.rmse_max),
            format!("{:.6}", row.rmse_localization_alone),
            ratio.clone(),
        ])
        .map_err(input)?;
        println!("{},{},{:.4},{ratio}", row.scenario, row.mode.as_str(), row.rmse);
    }
    w.flush().map_err(input)?;

    let mut scenarios: Vec<&str> = reports.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.dedup();
    scenarios.sort();
    scenarios.dedup();
    for scenario in scenarios {
        let path = runs.join(format!("residuals_{}.csv", scenario.replace('/', "_")));
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(input)?;
        w.write_record(["seed", "mode", "tick", "vehicle", "track_id", "dx", "dy"])
            .map_err(input)?;
        for r in reports.iter().filter(|r| r.scenario == scenario) {
            for res in &r.residuals {
                w.write_record([
                    r.seed.to_string(),
                    r.mode.as_str().to_string(),
                    res.tick.to_string(),
                    res.vehicle.clone(),
                    res.track_id.to_string(),
                    format!("{:.6}", res.dx),
                    format!("{:.6}", res.dy),
                ])
                .map_err(input)?;
            }
        }
        w.flush().map_err(input)?;
    }
    eprintln!(
        "wrote {} and per-scenario residual CSVs to {}",
        summary_path.display(),
        runs.display()
    );
    Ok(())
}
