//! `smstrack`: run the server, simulate fleets, fit and query the battery
//! model, export tracks.
//!
//! Results go to stdout, diagnostics to stderr. Exit status is 2 for usage
//! errors and 1 for anything that fails at run time.

use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use chrono_tz::Tz;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use smstrack_core::energy::{fit_battery_model, predict_lifetime, predict_lifetime_for_schedule, BatteryModel};
use smstrack_core::ids::{DeviceId, ScheduleId};
use smstrack_core::pipeline::{ExportFormat, Pipeline};
use smstrack_core::registry::Registry;
use smstrack_core::scheduler::{KindDraft, ScheduleDraft, Scheduler, Target, WindowDraft};
use smstrack_core::store::{JournalStore, MemoryStore, StorePort};
use smstrack_server::ServerConfig;
use smstrack_sim::{ScenarioConfig, StoreMode};

#[derive(Debug, Parser)]
#[command(name = "smstrack", version, about = "SMS-only vehicle tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scenario in virtual time and write events.jsonl, summary.json
    /// and store.tar.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Keep the store as a journal in this directory instead of memory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Fit the battery model to measured lifetimes.
    FitBattery {
        /// Comma-separated `interval:lifetime` pairs, both in minutes.
        #[arg(long, value_parser = parse_points)]
        points: Points,
        #[arg(long)]
        capacity: f64,
        /// Write the fitted model here (TOML).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict battery lifetime in minutes.
    PredictLifetime {
        /// Model file written by fit-battery. Defaults to the reference model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        load: Load,
        /// Start of the schedule simulation (RFC 3339). Defaults to now.
        #[arg(long, requires = "schedule")]
        start: Option<DateTime<Utc>>,
    },
    /// Export a device track from a store.
    Export {
        #[command(flatten)]
        source: StoreSource,
        #[arg(long)]
        device: DeviceId,
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        #[arg(long)]
        to: Option<DateTime<Utc>>,
        #[arg(long, default_value = "csv", value_parser = ExportFormat::from_str)]
        format: ExportFormat,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Load {
    /// Polling interval in minutes.
    #[arg(long)]
    interval: Option<f64>,
    /// Schedule file (TOML or JSON) with kind, every_secs/expr/at, window
    /// and timezone.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct StoreSource {
    /// Store directory.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Server config file; its store_path is used.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Points(Vec<(f64, f64)>);

fn parse_points(s: &str) -> Result<Points, String> {
    s.split(',')
        .map(|pair| {
            let (i, l) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("{pair:?}: expected interval:lifetime"))?;
            let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{pair:?}: {e}"));
            Ok((num(i)?, num(l)?))
        })
        .collect::<Result<_, _>>()
        .map(Points)
}

/// Schedule fields that matter for a lifetime estimate.
#[derive(Debug, Deserialize)]
struct ScheduleFile {
    #[serde(flatten)]
    kind: KindDraft,
    #[serde(default)]
    window: Option<WindowDraft>,
    #[serde(default)]
    timezone: Option<Tz>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Failure(String);

impl Failure {
    fn at(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        Failure(format!("{context}: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smstrack: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Serve { config } => {
            let config = ServerConfig::load(&config).map_err(|e| Failure::at(config.display(), e))?;
            smstrack_server::run(config).map_err(|e| Failure::at("serve", e))
        }
        Command::Simulate {
            scenario,
            seed,
            out,
            store,
        } => simulate(&scenario, seed, &out, store),
        Command::FitBattery { points, capacity, out } => fit(&points.0, capacity, out.as_deref()),
        Command::PredictLifetime { model, load, start } => predict(model.as_deref(), load, start),
        Command::Export {
            source,
            device,
            from,
            to,
            format,
        } => export(source, device, from, to, format),
    }
}

/// Write to stdout. A closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(Failure::at("stdout", e)),
        _ => Ok(()),
    }
}

fn print_json(value: &serde_json::Value) -> Outcome {
    emit(&(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn simulate(scenario: &Path, seed: Option<u64>, out: &Path, store: Option<PathBuf>) -> Outcome {
    let mut config = ScenarioConfig::load(scenario).map_err(|e| Failure(e.to_string()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let mode = store.map_or(StoreMode::Memory, StoreMode::Journal);
    let summary = smstrack_sim::run_scenario(config, out, mode).map_err(|e| Failure::at("simulate", e))?;
    print_json(&serde_json::to_value(&summary).expect("serializable"))
}

fn fit(points: &[(f64, f64)], capacity: f64, out: Option<&Path>) -> Outcome {
    let model = fit_battery_model(points, capacity).map_err(|e| Failure::at("fit", e))?;
    if let Some(path) = out {
        model.save(path).map_err(|e| Failure::at(path.display(), e))?;
    }
    let predicted: Vec<_> = points
        .iter()
        .map(|&(interval, measured)| {
            json!({
                "interval_min": interval,
                "measured_min": measured,
                "predicted_min": predict_lifetime(&model, interval),
            })
        })
        .collect();
    print_json(&json!({"model": model, "predicted": predicted}))
}

fn predict(model: Option<&Path>, load: Load, start: Option<DateTime<Utc>>) -> Outcome {
    let model = match model {
        Some(path) => BatteryModel::load(path).map_err(|e| Failure::at(path.display(), e))?,
        None => BatteryModel::reference(),
    };
    let minutes = match (load.interval, load.schedule) {
        (Some(interval), _) => {
            if !(interval.is_finite() && interval > 0.0) {
                return Err(Failure(format!("interval must be positive, got {interval}")));
            }
            predict_lifetime(&model, interval)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Failure::at(path.display(), e))?;
            let file: ScheduleFile = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| Failure::at(path.display(), e))?
            } else {
                toml::from_str(&text).map_err(|e| Failure::at(path.display(), e))?
            };
            let start = start.unwrap_or_else(Utc::now);
            let draft = ScheduleDraft {
                kind: file.kind,
                target: Target::Device(DeviceId(0)),
                window: file.window,
                enabled: true,
                timezone: file.timezone,
            };
            let zone = file.timezone.unwrap_or(Tz::UTC);
            let scheduler = Scheduler::open(Arc::new(MemoryStore::new()), zone, start)
                .map_err(|e| Failure::at("schedule", e))?;
            let schedule = scheduler
                .build(ScheduleId(0), &draft, start)
                .map_err(|e| Failure::at(path.display(), e))?;
            predict_lifetime_for_schedule(&model, &schedule, start)
        }
        (None, None) => unreachable!("clap requires --interval or --schedule"),
    };
    emit(&format!("{minutes:.0}\n"))
}

fn export(
    source: StoreSource,
    device: DeviceId,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    format: ExportFormat,
) -> Outcome {
    let dir = match (source.store, source.config) {
        (Some(dir), _) => dir,
        (None, Some(path)) => {
            ServerConfig::load(&path)
                .map_err(|e| Failure::at(path.display(), e))?
                .store_path
        }
        (None, None) => unreachable!("clap requires --store or --config"),
    };
    if !dir.is_dir() {
        return Err(Failure(format!("{}: no such store directory", dir.display())));
    }
    let store: Arc<dyn StorePort> = Arc::new(JournalStore::open(&dir).map_err(|e| Failure::at(dir.display(), e))?);
    let registry = Registry::open(store.clone()).map_err(|e| Failure::at("registry", e))?;
    let from = from.unwrap_or(DateTime::UNIX_EPOCH);
    let to = to.unwrap_or_else(Utc::now);
    let text = Pipeline::new(store)
        .export_track(&registry, device, from, to, format)
        .map_err(|e| Failure::at("export", e))?;
    if text.ends_with('\n') {
        emit(&text)
    } else {
        emit(&(text + "\n"))
    }
}
