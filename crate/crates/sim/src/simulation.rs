//! Runs the real engine against a virtual fleet on a virtual clock.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;
use serde_json::{json, Value};

use smstrack_core::clock::{Clock, VirtualClock};
use smstrack_core::engine::{Engine, EngineConfig, EngineError};
use smstrack_core::gateway::{JobState, LocateJob};
use smstrack_core::ids::DeviceId;
use smstrack_core::store::{snapshot_export, JournalStore, MemoryStore, Namespace, StoreError, StoreExt, StorePort};

use crate::fleet::{Fleet, FleetEvent};
use crate::scenario::{ConfigError, ScenarioConfig};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("fleet: {0}")]
    Fleet(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("restart needs a durable store")]
    NotDurable,
}

/// Where the engine keeps its data during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreMode {
    Memory,
    Journal(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JobCounts {
    pub sent: u64,
    pub completed: u64,
    pub timed_out: u64,
    /// Still waiting for a reply when the run ended.
    pub outstanding: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocatorSummary {
    pub label: String,
    pub device_id: DeviceId,
    pub imei: String,
    pub requests: u64,
    pub replies: u64,
    pub remaining_mah: f64,
    pub depleted_at: Option<DateTime<Utc>>,
    pub lifetime_minutes: Option<f64>,
    /// Latency of every completed job, in completion order.
    pub latencies_secs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub jobs: JobCounts,
    pub positions: usize,
    pub mean_latency_secs: Option<f64>,
    pub locators: Vec<LocatorSummary>,
}

pub struct Simulation {
    config: ScenarioConfig,
    engine_config: EngineConfig,
    clock: VirtualClock,
    fleet: Fleet,
    engine: Option<Engine>,
    store_mode: StoreMode,
    device_ids: Vec<DeviceId>,
    log: Vec<Value>,
    now: DateTime<Utc>,
    wall_start: Instant,
}

fn open_store(mode: &StoreMode) -> Result<Arc<dyn StorePort>, SimError> {
    Ok(match mode {
        StoreMode::Memory => Arc::new(MemoryStore::new()),
        StoreMode::Journal(dir) => Arc::new(JournalStore::open(dir)?),
    })
}

impl Simulation {
    pub fn new(config: ScenarioConfig, store_mode: StoreMode) -> Result<Self, SimError> {
        config.validate()?;
        let start = config.start;
        let clock = VirtualClock::new(start);
        let fleet = Fleet::new(&config.locators, &config.battery(), config.seed, start).map_err(SimError::Fleet)?;
        let engine_config = EngineConfig {
            timezone: config.timezone(),
            response_timeout: Duration::seconds(config.response_timeout_secs as i64),
        };
        let store = open_store(&store_mode)?;
        let transport = Box::new(fleet.transport(Arc::new(clock.clone())));
        let mut engine = Engine::open(store, transport, engine_config, start)?;
        let device_ids = config.install(&mut engine, start)?;
        Ok(Self {
            config,
            engine_config,
            clock,
            fleet,
            engine: Some(engine),
            store_mode,
            device_ids,
            log: Vec::new(),
            now: start,
            wall_start: Instant::now(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.now
    }

    pub fn engine(&self) -> &Engine {
        self.engine.as_ref().expect("engine running")
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        self.engine.as_mut().expect("engine running")
    }

    pub fn fleet(&self) -> &Fleet {
        &self.fleet
    }

    pub fn device_ids(&self) -> &[DeviceId] {
        &self.device_ids
    }

    /// Combined engine and fleet log, one JSON object per event.
    pub fn log(&self) -> &[Value] {
        &self.log
    }

    fn record_fleet(&mut self, events: Vec<FleetEvent>) {
        for e in events {
            let mut v = serde_json::to_value(&e).expect("serializable");
            v["source"] = json!("fleet");
            self.log.push(v);
        }
    }

    fn pace(&self, target: DateTime<Utc>) {
        let Some(k) = self.config.clock_acceleration else {
            return;
        };
        let sim_secs = (target - self.config.start).num_microseconds().unwrap_or(i64::MAX) as f64 / 1e6;
        let due = std::time::Duration::from_secs_f64((sim_secs / k).max(0.0));
        if let Some(wait) = due.checked_sub(self.wall_start.elapsed()) {
            std::thread::sleep(wait);
        }
    }

    fn step_at(&mut self, now: DateTime<Utc>) -> Result<(), SimError> {
        self.pace(now);
        self.clock.advance_to(now);
        self.now = now;
        let before = self.fleet.step(now);
        self.record_fleet(before);
        let records = self.engine_mut().tick(now)?;
        for r in records {
            let mut v = serde_json::to_value(&r).expect("serializable");
            v["source"] = json!("engine");
            self.log.push(v);
        }
        let after = self.fleet.step(now);
        self.record_fleet(after);
        Ok(())
    }

    /// Process every event up to and including `until`.
    pub fn run_until(&mut self, until: DateTime<Utc>) -> Result<(), SimError> {
        loop {
            let next = [self.engine().next_wakeup(), self.fleet.next_event_time()]
                .into_iter()
                .flatten()
                .min()
                .map(|t| t.max(self.now));
            match next {
                Some(t) if t <= until => self.step_at(t)?,
                _ => break,
            }
        }
        if until > self.now {
            self.pace(until);
            self.now = until;
            self.clock.advance_to(until);
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<(), SimError> {
        let end = self.config.end();
        self.run_until(end)
    }

    /// Simulate a crash: drop the engine, optionally leave a torn write at
    /// the end of the journal, and reopen from disk.
    pub fn restart(&mut self, tear_tail: bool) -> Result<(), SimError> {
        let StoreMode::Journal(dir) = self.store_mode.clone() else {
            return Err(SimError::NotDurable);
        };
        self.engine = None;
        if tear_tail {
            let mut journal = OpenOptions::new().append(true).open(dir.join("journal.log"))?;
            journal.write_all(b"0badf00d [{\"op\":\"put\",\"ns\":\"positions\",\"key\":\"torn")?;
        }
        let store = open_store(&self.store_mode)?;
        let transport = Box::new(self.fleet.transport(Arc::new(self.clock.clone())));
        self.engine = Some(Engine::open(store, transport, self.engine_config, self.now)?);
        self.log.push(json!({"source": "sim", "type": "engine_restarted", "at": self.now, "torn_tail": tear_tail}));
        Ok(())
    }

    pub fn summary(&self) -> Result<Summary, SimError> {
        let store = self.engine().store();
        let jobs: Vec<LocateJob> = store.scan_json(Namespace::Jobs)?;
        let mut counts = JobCounts::default();
        let mut latencies: BTreeMap<DeviceId, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
        for job in &jobs {
            counts.sent += 1;
            match job.state {
                JobState::Completed => {
                    counts.completed += 1;
                    if let (Some(at), Some(l)) = (job.finished_at, job.latency_secs) {
                        latencies.entry(job.device_id).or_default().push((at, l));
                    }
                }
                JobState::TimedOut => counts.timed_out += 1,
                JobState::Sent => counts.outstanding += 1,
            }
        }
        let all: Vec<f64> = latencies.values().flatten().map(|(_, l)| *l).collect();
        let mean_latency_secs = (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64);
        let locators = self
            .fleet
            .locators()
            .iter()
            .zip(&self.device_ids)
            .map(|(l, &id)| {
                let mut lat = latencies.remove(&id).unwrap_or_default();
                lat.sort_by_key(|x| x.0);
                LocatorSummary {
                    label: l.spec().label.clone(),
                    device_id: id,
                    imei: l.spec().imei.clone(),
                    requests: l.requests(),
                    replies: l.replies(),
                    remaining_mah: l.remaining_mah(),
                    depleted_at: l.depleted_at(),
                    lifetime_minutes: l
                        .depleted_at()
                        .map(|t| (t - self.config.start).num_microseconds().unwrap_or(0) as f64 / 60e6),
                    latencies_secs: lat.into_iter().map(|x| x.1).collect(),
                }
            })
            .collect();
        Ok(Summary {
            seed: self.config.seed,
            start: self.config.start,
            end: self.now,
            jobs: counts,
            positions: store.scan(Namespace::Positions)?.len(),
            mean_latency_secs,
            locators,
        })
    }

    /// Write `events.jsonl`, `summary.json` and `store.tar` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<Summary, SimError> {
        fs::create_dir_all(dir)?;
        let mut events = String::new();
        for v in &self.log {
            events.push_str(&v.to_string());
            events.push('\n');
        }
        fs::write(dir.join("events.jsonl"), events)?;
        let summary = self.summary()?;
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
        )?;
        snapshot_export(self.engine().store().as_ref(), dir.join("store.tar"))?;
        Ok(summary)
    }

    pub fn clock(&self) -> &dyn Clock {
        &self.clock
    }
}

/// Run a whole scenario and write its outputs.
pub fn run_scenario(config: ScenarioConfig, out_dir: &Path, store_mode: StoreMode) -> Result<Summary, SimError> {
    let mut sim = Simulation::new(config, store_mode)?;
    sim.run()?;
    sim.write_outputs(out_dir)
}
