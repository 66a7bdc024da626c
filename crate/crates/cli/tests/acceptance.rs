//! Acceptance run: one line per criterion, `PASS` or `FAIL`, with wall time
//! against its budget. Exits non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration as WallDuration, Instant};

use chrono::{DateTime, Datelike, Duration, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use smstrack_core::codec::{
    format_tracker_response, maps_url, parse_tracker_response, FixReport, MessageKind, TrackerMessage,
};
use smstrack_core::energy::{fit_battery_model, predict_lifetime, BatteryModel};
use smstrack_core::engine::{Engine, EngineConfig, EngineError};
use smstrack_core::events::{Event, EventLog};
use smstrack_core::gateway::{
    GatewayError, InboundSms, JobState, LocateJob, OutboundSms, TransportError, TransportPort,
};
use smstrack_core::ids::DeviceId;
use smstrack_core::pipeline::Position;
use smstrack_core::registry::NewDevice;
use smstrack_core::scheduler::{estimate_request_count, next_fire, parse_cron, KindDraft, Schedule, ScheduleDraft, Target};
use smstrack_core::store::{MemoryStore, Namespace, StoreExt, StorePort};
use smstrack_server::config::{parse_pairs, ServerConfig};
use smstrack_sim::{LocatorSpec, ScenarioConfig, Simulation, StoreMode, VirtualLocator};

use support::cron_gen::{random_cron, ZONES};
use support::cron_oracle::OracleCron;

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn prop_runner(cases: u32) -> TestRunner {
    TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    })
}

fn t0() -> DateTime<Utc> {
    "2024-06-01T00:00:00Z".parse().unwrap()
}

fn minutes(d: Duration) -> f64 {
    d.num_microseconds().unwrap() as f64 / 60e6
}

/// Great-circle distance on a sphere of the mean Earth radius.
fn distance_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6_371_008.8 * h.sqrt().asin()
}

// 1 ---------------------------------------------------------------------

fn battery_fit() -> Verdict {
    let model = fit_battery_model(&[(1.0, 715.0), (20.0, 3637.0)], 850.0).map_err(|e| e.to_string())?;
    let l1 = predict_lifetime(&model, 1.0);
    let l20 = predict_lifetime(&model, 20.0);
    ensure((l1 - 715.0).abs() <= 1.0, || format!("1-min lifetime {l1:.2}"))?;
    ensure((l20 - 3637.0).abs() <= 1.0, || format!("20-min lifetime {l20:.2}"))?;
    // closed form for two points: cap/L = idle + per/interval, solved directly
    let (a, b) = (850.0 / 715.0, 850.0 / 3637.0);
    let per = (a - b) / (1.0 - 1.0 / 20.0);
    let idle = a - per;
    ensure((model.idle_rate() - idle).abs() < 1e-9 && (model.per_request_mah() - per).abs() < 1e-9, || {
        format!("parameters {} / {} vs {idle} / {per}", model.idle_rate(), model.per_request_mah())
    })?;
    Ok(format!("L(1) = {l1:.3}, L(20) = {l20:.3} min"))
}

// 2 ---------------------------------------------------------------------

fn lifetime_monotone() -> Verdict {
    let mut runner = prop_runner(2000);
    let strategy = (1.0f64..5000.0, 0.01f64..200.0, 0.01f64..20.0, 1u32..=60, 1u32..=60);
    runner
        .run(&strategy, |(cap, idle_ma, per, a, b)| {
            let model = BatteryModel::new(cap, idle_ma, per).unwrap();
            let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
            let (la, lb) = (predict_lifetime(&model, lo), predict_lifetime(&model, hi));
            prop_assert!(la <= lb, "L({lo}) = {la} > L({hi}) = {lb}");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let reference = BatteryModel::reference();
    let series: Vec<f64> = (1..=60).map(|i| predict_lifetime(&reference, i as f64)).collect();
    ensure(series.windows(2).all(|w| w[0] < w[1]), || "reference model not increasing".into())?;
    Ok("2000 random models, reference strictly increasing".into())
}

// 3 ---------------------------------------------------------------------

fn stationary_scenario(every_secs: u64, hours: u64) -> String {
    format!(
        "seed = 5\nstart = 2024-06-01T00:00:00Z\nduration = \"{hours}h\"\n\
         [[locators]]\nlabel = \"bench\"\nimei = \"356000000000010\"\nphone_number = \"+60123450010\"\n\
         password = \"123456\"\nroute = [{{ lat = 3.139, lon = 101.6869 }}]\n\
         [[schedules]]\nkind = \"interval\"\nevery_secs = {every_secs}\ntarget = {{ device = \"bench\" }}\n"
    )
}

fn simulated_depletion() -> Verdict {
    let mut report = Vec::new();
    for (every_secs, want) in [(60u64, 715.0), (1200, 3637.0)] {
        let started = Instant::now();
        let config = ScenarioConfig::from_toml(&stationary_scenario(every_secs, 96)).map_err(|e| e.to_string())?;
        let mut sim = Simulation::new(config, StoreMode::Memory).map_err(|e| e.to_string())?;
        sim.run().map_err(|e| e.to_string())?;
        let died = sim.fleet().locators()[0].depleted_at().ok_or("locator never depleted")?;
        let got = minutes(died - t0());
        let took = started.elapsed();
        ensure((got - want).abs() <= 0.05 * want, || format!("{every_secs} s interval: {got:.1} min vs {want}"))?;
        ensure(took < WallDuration::from_secs(30), || format!("{every_secs} s interval took {took:?}"))?;
        report.push(format!("{got:.1} min ({:.1} s)", took.as_secs_f64()));
    }
    Ok(format!("1-min: {}, 20-min: {}", report[0], report[1]))
}

// 4, 5 ------------------------------------------------------------------

fn bench_locator(seed: u64) -> VirtualLocator {
    let mut spec = LocatorSpec::stationary("bench", "356000000000010", "+60123450010", 3.139, 101.6869);
    spec.capacity_mah = Some(1e12);
    spec.fix_success_prob = 1.0;
    spec.incomplete_prob = 0.0;
    VirtualLocator::new(spec, &BatteryModel::reference(), seed, 0, t0()).unwrap()
}

fn fix_accuracy() -> Verdict {
    let mut locator = bench_locator(404);
    let truth = (3.139, 101.6869);
    let n = 100_000;
    let (mut within5, mut within10) = (0u32, 0u32);
    let mut now = t0();
    for _ in 0..n {
        now += Duration::seconds(60);
        let reply = locator.respond_to_locate(now).ok_or("locator went silent")?;
        let TrackerMessage::Fix(report) = parse_tracker_response(&reply.body) else {
            return Err(format!("not a fix: {}", reply.body));
        };
        let d = distance_m(truth, (report.latitude, report.longitude));
        within5 += u32::from(d <= 5.0);
        within10 += u32::from(d <= 10.0);
    }
    let (p5, p10) = (within5 as f64 / n as f64, within10 as f64 / n as f64);
    ensure((p5 - 0.756).abs() <= 0.02, || format!("P(<=5 m) = {p5:.4}"))?;
    ensure((p10 - 0.931).abs() <= 0.02, || format!("P(<=10 m) = {p10:.4}"))?;
    Ok(format!("P(<=5 m) = {p5:.4}, P(<=10 m) = {p10:.4} over {n} parsed fixes"))
}

fn latency_mean() -> Verdict {
    let mut locator = bench_locator(505);
    let n = 10_000;
    let mut sum = 0.0;
    let mut now = t0();
    for _ in 0..n {
        now += Duration::seconds(60);
        sum += locator.respond_to_locate(now).ok_or("locator went silent")?.delay_secs;
    }
    let mean = sum / n as f64;
    ensure((30.5..=42.8).contains(&mean), || format!("mean latency {mean:.2} s"))?;
    Ok(format!("mean of {n} = {mean:.2} s"))
}

// 6 ---------------------------------------------------------------------

fn fix_report() -> impl Strategy<Value = FixReport> {
    (
        -90_000_000i64..=90_000_000,
        -180_000_000i64..=180_000_000,
        0u32..3000,
        0u8..=100,
        "[0-9]{15}",
        proptest::option::of(0i64..4_000_000_000),
    )
        .prop_map(|(lat, lon, speed, battery, imei, time)| {
            let (lat, lon) = (lat as f64 / 1e6, lon as f64 / 1e6);
            FixReport {
                latitude: lat,
                longitude: lon,
                speed: speed as f64 / 10.0,
                battery_percent: battery,
                maps_url: maps_url(lat, lon),
                imei,
                device_time: time.map(|s| DateTime::<Utc>::from_timestamp(s, 0).unwrap()),
            }
        })
}

fn codec_roundtrip() -> Verdict {
    let mut runner = prop_runner(1000);
    let message = prop_oneof![
        fix_report().prop_map(TrackerMessage::Fix),
        fix_report().prop_map(TrackerMessage::LastKnownFix)
    ];
    runner
        .run(&message, |msg| {
            let text = format_tracker_response(&msg).unwrap();
            prop_assert_eq!(parse_tracker_response(&text), msg);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let mut runner = prop_runner(1000);
    runner
        .run(&(-90.0f64..90.0, -180.0f64..180.0, "[A-Za-z ]{0,20}"), |(lat, lon, noise)| {
            let body = format!("{noise} {}", maps_url(lat, lon));
            prop_assert_eq!(parse_tracker_response(&body).kind(), MessageKind::Incomplete);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 round trips, 1000 maps-only bodies".into())
}

// 7 ---------------------------------------------------------------------

fn cron_against_scan() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC405);
    let mut calls = 0usize;
    for _ in 0..100 {
        let expr = random_cron(&mut rng);
        let zone: Tz = ZONES[rng.random_range(0..ZONES.len())].parse().unwrap();
        let start = "2024-01-01T00:00:00Z".parse::<DateTime<Utc>>().unwrap()
            + Duration::seconds(rng.random_range(0..365 * 86_400));
        let end = start + Duration::days(365);
        let spec = parse_cron(&expr).map_err(|e| format!("{expr}: {e}"))?;
        let mut cursor = start;
        for want in OracleCron::new(&expr).fires(&zone, start, end) {
            let got = next_fire(&spec, cursor, &zone);
            calls += 1;
            ensure(got == Some(want), || format!("{expr} in {zone} after {cursor}: {got:?} vs {want}"))?;
            cursor = want;
        }
        let tail = next_fire(&spec, cursor, &zone);
        calls += 1;
        ensure(tail.is_none_or(|t| t >= end), || format!("{expr} in {zone}: spurious fire {tail:?}"))?;
    }
    Ok(format!("100 expressions, {calls} next_fire calls"))
}

// 8 ---------------------------------------------------------------------

const WEEKEND: &str = r#"
seed = 8
start = 2024-06-01T00:00:00Z
duration = "14days"
timezone = "Asia/Kuala_Lumpur"

[[locators]]
label = "truck"
imei = "356000000000001"
phone_number = "+60123450001"
password = "123456"
capacity_mah = 100000
route = [{ lat = 5.41, lon = 118.03 }]

[[schedules]]
kind = "cron"
expr = "*/20 * * * *"
target = { device = "truck" }
window = { start = "14:00", end = "19:00", days = ["sat", "sun"] }
"#;

fn weekend_window() -> Verdict {
    let config = ScenarioConfig::from_toml(WEEKEND).map_err(|e| e.to_string())?;
    let (start, end) = (config.start, config.end());
    let mut sim = Simulation::new(config, StoreMode::Memory).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    let store = sim.engine().store().clone();
    let jobs: Vec<LocateJob> = store.scan_json(Namespace::Jobs).map_err(|e| e.to_string())?;
    let zone = chrono_tz::Asia::Kuala_Lumpur;
    for j in &jobs {
        let local = j.submitted_at.with_timezone(&zone);
        let weekend = matches!(local.weekday(), Weekday::Sat | Weekday::Sun);
        ensure(weekend && (14..19).contains(&local.hour()), || format!("request at {local}"))?;
    }
    let schedules: Vec<Schedule> = store.scan_json(Namespace::Schedules).map_err(|e| e.to_string())?;
    let expected = estimate_request_count(&schedules[0], start, end - start);
    // 4 weekend days x 5 hours x 3 per hour
    ensure(expected == 60, || format!("estimate {expected}"))?;
    ensure(jobs.len() as u64 == expected, || format!("{} requests, estimate {expected}", jobs.len()))?;
    Ok(format!("{} requests, all inside the window, estimate {expected}", jobs.len()))
}

// 9 ---------------------------------------------------------------------

fn fleet_scenario() -> String {
    let mut s = String::from(
        "seed = 9\nstart = 2024-06-01T00:00:00Z\nduration = \"8h\"\n\
         [[groups]]\nname = \"all\"\nmembers = [\"v0\", \"v1\", \"v2\", \"v3\", \"v4\"]\n\
         [[schedules]]\nkind = \"interval\"\nevery_secs = 600\ntarget = { group = \"all\" }\n",
    );
    for i in 0..5 {
        s += &format!(
            "[[locators]]\nlabel = \"v{i}\"\nimei = \"35600000000000{i}\"\nphone_number = \"+6012345000{i}\"\n\
             password = \"123456\"\nroute = [{{ lat = 5.4{i}, lon = 118.03 }}, {{ lat = 5.5{i}, lon = 118.13, dwell_secs = 900 }}]\n"
        );
    }
    s
}

fn positions_of(store: &Arc<dyn StorePort>) -> Result<Vec<Position>, String> {
    store.scan_json(Namespace::Positions).map_err(|e| e.to_string())
}

fn get_json(agent: &ureq::Agent, url: &str) -> Result<Value, String> {
    agent
        .get(url)
        .set("Authorization", "Bearer viewer-token")
        .call()
        .map_err(|e| format!("GET {url}: {e}"))?
        .into_json()
        .map_err(|e| format!("GET {url}: {e}"))
}

fn end_to_end() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store_dir = dir.path().join("store");
    let config = ScenarioConfig::from_toml(&fleet_scenario()).map_err(|e| e.to_string())?;
    let mid = config.start + Duration::hours(4);
    let mut sim = Simulation::new(config, StoreMode::Journal(store_dir.clone())).map_err(|e| e.to_string())?;
    sim.run_until(mid).map_err(|e| e.to_string())?;

    // kill with a torn tail, recover, check nothing committed was lost
    let before = positions_of(sim.engine().store())?;
    ensure(!before.is_empty(), || "no positions before restart".into())?;
    sim.restart(true).map_err(|e| e.to_string())?;
    let after = positions_of(sim.engine().store())?;
    ensure(after == before, || format!("{} positions before restart, {} after", before.len(), after.len()))?;
    sim.run().map_err(|e| e.to_string())?;

    let store = sim.engine().store().clone();
    let positions = positions_of(&store)?;
    ensure(before.iter().all(|p| positions.contains(p)), || "positions lost after recovery".into())?;
    let jobs: Vec<LocateJob> = store.scan_json(Namespace::Jobs).map_err(|e| e.to_string())?;
    let completed: Vec<&LocateJob> = jobs.iter().filter(|j| j.state == JobState::Completed).collect();
    ensure(completed.len() >= 100, || format!("only {} completed jobs", completed.len()))?;
    for j in &completed {
        let pid = j.position_id.ok_or_else(|| format!("job {} has no position", j.id))?;
        ensure(positions.iter().any(|p| p.position_id == pid && p.device_id == j.device_id), || {
            format!("job {} names missing position {pid}", j.id)
        })?;
    }

    // fleet status rebuilt from the event log alone
    let mut replayed: BTreeMap<DeviceId, Position> = BTreeMap::new();
    let mut last_job: BTreeMap<DeviceId, LocateJob> = BTreeMap::new();
    let mut last_latency: BTreeMap<DeviceId, f64> = BTreeMap::new();
    let log = EventLog::open(store.clone()).map_err(|e| e.to_string())?;
    let mut seq = 0;
    loop {
        let page = log.after(seq, 500).map_err(|e| e.to_string())?;
        let Some(last) = page.last() else { break };
        seq = last.seq;
        for r in page {
            match r.event {
                Event::PositionIngested { position } => {
                    replayed.insert(position.device_id, position);
                }
                Event::JobStateChanged { job } => {
                    if let Some(l) = job.latency_secs.filter(|_| job.state == JobState::Completed) {
                        last_latency.insert(job.device_id, l);
                    }
                    last_job.insert(job.device_id, job);
                }
                Event::ScheduleFired { .. } => {}
            }
        }
    }
    for status in sim.engine().fleet_status().map_err(|e| e.to_string())? {
        let id = status.device_id;
        let outstanding = last_job.get(&id).filter(|j| j.state == JobState::Sent);
        ensure(status.last_position.as_ref() == replayed.get(&id), || format!("device {id}: last position differs from replay"))?;
        ensure(status.battery_percent == replayed.get(&id).and_then(|p| p.battery_percent), || format!("device {id}: battery differs"))?;
        ensure(status.outstanding_job.as_ref() == outstanding, || format!("device {id}: outstanding job differs from replay"))?;
        ensure(status.last_latency_secs == last_latency.get(&id).copied(), || format!("device {id}: latency differs from replay"))?;
    }
    let ids = sim.device_ids().to_vec();
    drop(sim);
    drop(store);

    std::fs::write(dir.path().join("tokens.txt"), "viewer-token viewer\n").map_err(|e| e.to_string())?;
    let text = "listen = 127.0.0.1:0\ntoken_file = tokens.txt\nstore_path = store\ntransport = none\n";
    let server_config = ServerConfig::from_pairs(parse_pairs(text).map_err(|e| e.to_string())?, dir.path(), |_| None)
        .map_err(|e| e.to_string())?;
    let server = smstrack_server::start(server_config).map_err(|e| e.to_string())?;
    let agent = ureq::AgentBuilder::new().timeout(WallDuration::from_secs(10)).build();
    let base = server.base_url();

    let status = get_json(&agent, &format!("{base}/fleet/status"))?;
    let status = status.as_array().ok_or("fleet status is not an array")?;
    ensure(status.len() == 5, || format!("{} devices in fleet status", status.len()))?;
    for entry in status {
        let id: DeviceId = serde_json::from_value(entry["device_id"].clone()).map_err(|e| e.to_string())?;
        let shown: Position = serde_json::from_value(entry["last_position"].clone()).map_err(|e| e.to_string())?;
        let want = replayed.get(&id).ok_or_else(|| format!("device {id} never reported"))?;
        ensure(&shown == want, || format!("device {id}: status {shown:?} vs replay {want:?}"))?;
    }

    let mut features = 0;
    for id in &ids {
        let url = format!(
            "{base}/devices/{id}/track?from=2024-06-01T00:00:00Z&to=2024-06-02T00:00:00Z&format=geojson"
        );
        let body = agent
            .get(&url)
            .set("Authorization", "Bearer viewer-token")
            .call()
            .map_err(|e| format!("GET {url}: {e}"))?
            .into_string()
            .map_err(|e| e.to_string())?;
        let gj: geojson::GeoJson = body.parse().map_err(|e| format!("device {id}: invalid GeoJSON: {e}"))?;
        let geojson::GeoJson::FeatureCollection(fc) = gj else {
            return Err(format!("device {id}: not a FeatureCollection"));
        };
        let mut points: Vec<(f64, f64)> = Vec::new();
        for f in &fc.features {
            if let Some(geojson::Value::Point(c)) = f.geometry.as_ref().map(|g| &g.value) {
                points.push((c[1], c[0]));
            }
        }
        let mut mine: Vec<&Position> = positions.iter().filter(|p| p.device_id == *id).collect();
        mine.sort_by_key(|p| (p.server_time, p.position_id));
        ensure(points.len() == mine.len(), || format!("device {id}: {} points, {} positions", points.len(), mine.len()))?;
        for (pt, p) in points.iter().zip(&mine) {
            ensure((pt.0 - p.latitude).abs() < 1e-9 && (pt.1 - p.longitude).abs() < 1e-9, || {
                format!("device {id}: point {pt:?} vs position {p:?}")
            })?;
        }
        features += fc.features.len();
    }
    server.shutdown().map_err(|e| e.to_string())?;
    Ok(format!(
        "{} completed jobs, {} positions, {features} GeoJSON features, restart kept {}",
        completed.len(),
        positions.len(),
        before.len()
    ))
}

// 10 --------------------------------------------------------------------

#[derive(Clone, Default)]
struct Mailbox {
    inbox: Arc<Mutex<Vec<InboundSms>>>,
}

impl TransportPort for Mailbox {
    fn send(&mut self, _: &OutboundSms) -> Result<(), TransportError> {
        Ok(())
    }
    fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError> {
        Ok(std::mem::take(&mut *self.inbox.lock().unwrap()))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Advance(i64),
    Locate(usize),
    Reply(usize, bool),
}

const TRACE_IMEIS: [&str; 3] = ["359710049887761", "359710049887762", "359710049887763"];

fn one_outstanding_job() -> Verdict {
    let op = prop_oneof![
        3 => (1i64..400).prop_map(Op::Advance),
        2 => (0usize..3).prop_map(Op::Locate),
        3 => (0usize..3, any::<bool>()).prop_map(|(d, last_known)| Op::Reply(d, last_known)),
    ];
    let mut runner = prop_runner(300);
    runner
        .run(&proptest::collection::vec(op, 1..60), |ops| {
            let store: Arc<dyn StorePort> = Arc::new(MemoryStore::new());
            let mailbox = Mailbox::default();
            let mut engine = Engine::open(store.clone(), Box::new(mailbox.clone()), EngineConfig::default(), t0()).unwrap();
            let mut ids = Vec::new();
            for (i, imei) in TRACE_IMEIS.iter().enumerate() {
                let device = engine
                    .registry_mut()
                    .register_device(NewDevice {
                        imei: (*imei).into(),
                        phone_number: format!("+6012345678{i}"),
                        password: "123456".into(),
                        battery_capacity_mah: None,
                        label: String::new(),
                    })
                    .unwrap();
                ids.push(device.id);
            }
            let group = engine.registry_mut().create_group("all", ids.iter().copied().collect()).unwrap().id;
            let (scheduler, registry) = engine.scheduler_mut();
            let draft = ScheduleDraft {
                kind: KindDraft::Interval { every_secs: 120, anchor: None },
                target: Target::Group(group),
                window: None,
                enabled: true,
                timezone: None,
            };
            scheduler.create(&draft, registry, t0()).unwrap();
            let mut now = t0();
            engine.tick(now).unwrap();
            for op in ops {
                match op {
                    Op::Advance(secs) => now += Duration::seconds(secs),
                    Op::Locate(d) => match engine.locate_now(ids[d], now) {
                        Ok(_) | Err(EngineError::Gateway(GatewayError::DuplicateOutstanding { .. })) => {}
                        Err(e) => return Err(TestCaseError::fail(e.to_string())),
                    },
                    Op::Reply(d, last_known) => {
                        let r = FixReport::new(5.41, 118.03, 0.0, 80, TRACE_IMEIS[d]);
                        let msg = if last_known { TrackerMessage::LastKnownFix(r) } else { TrackerMessage::Fix(r) };
                        mailbox.inbox.lock().unwrap().push(InboundSms {
                            from: format!("+6012345678{d}"),
                            body: format_tracker_response(&msg).unwrap(),
                            received_at: now,
                        });
                    }
                }
                engine.tick(now).unwrap();
                let jobs: Vec<LocateJob> = store.scan_json(Namespace::Jobs).unwrap();
                for id in &ids {
                    let open = jobs.iter().filter(|j| j.device_id == *id && j.state == JobState::Sent).count();
                    prop_assert!(open <= 1, "device {} has {} outstanding jobs", id, open);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("300 random traces".into())
}

// -----------------------------------------------------------------------

struct Criterion {
    name: &'static str,
    budget: WallDuration,
    check: fn() -> Verdict,
}

fn main() {
    let secs = WallDuration::from_secs;
    let criteria = [
        Criterion { name: "battery fit reproduces both measured lifetimes within 1 min", budget: secs(1), check: battery_fit },
        Criterion { name: "predicted lifetime is monotone in the interval", budget: secs(10), check: lifetime_monotone },
        Criterion { name: "simulated stationary locator depletes on schedule (5%)", budget: secs(60), check: simulated_depletion },
        Criterion { name: "fix error shares within 5 m and 10 m", budget: secs(10), check: fix_accuracy },
        Criterion { name: "mean response latency within [30.5, 42.8] s", budget: secs(5), check: latency_mean },
        Criterion { name: "codec round trip and maps-only classification", budget: secs(1), check: codec_roundtrip },
        Criterion { name: "cron next_fire agrees with a one-year minute scan", budget: secs(30), check: cron_against_scan },
        Criterion { name: "weekend window: requests only inside, count matches estimate", budget: secs(10), check: weekend_window },
        Criterion { name: "end to end: jobs, fleet status, GeoJSON, crash recovery", budget: secs(60), check: end_to_end },
        Criterion { name: "at most one outstanding job per device", budget: secs(10), check: one_outstanding_job },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = std::panic::catch_unwind(c.check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = started.elapsed();
        let verdict = verdict.and_then(|detail| {
            if took <= c.budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {took:.2?}, budget {:?}", c.budget))
            }
        });
        match verdict {
            Ok(detail) => println!("PASS {:>2} {} [{:.2} s / {} s] {detail}", i + 1, c.name, took.as_secs_f64(), c.budget.as_secs()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {} [{:.2} s / {} s] {why}", i + 1, c.name, took.as_secs_f64(), c.budget.as_secs());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
