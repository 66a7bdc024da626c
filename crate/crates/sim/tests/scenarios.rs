use chrono::{Duration, TimeZone, Utc};
use smstrack_core::codec::{parse_tracker_response, MessageKind};
use smstrack_core::energy::{predict_lifetime, BatteryModel};
use smstrack_core::store::Namespace;
use smstrack_sim::geo::haversine_m;
use smstrack_sim::{LocatorSpec, ScenarioConfig, Simulation, StoreMode, VirtualLocator};

fn interval_scenario(every_secs: u64, hours: u64, locators: usize) -> String {
    let mut s = format!(
        "seed = 11\nstart = 2024-06-01T00:00:00Z\nduration = \"{hours}h\"\n\
         [[groups]]\nname = \"all\"\nmembers = [{}]\n\
         [[schedules]]\nkind = \"interval\"\nevery_secs = {every_secs}\ntarget = {{ group = \"all\" }}\n",
        (0..locators).map(|i| format!("\"l{i}\"")).collect::<Vec<_>>().join(", ")
    );
    for i in 0..locators {
        s += &format!(
            "[[locators]]\nlabel = \"l{i}\"\nimei = \"35600000000{i:04}\"\nphone_number = \"+6012345{i:04}\"\n\
             password = \"123456\"\nroute = [{{ lat = 5.41, lon = 118.03 }}]\n"
        );
    }
    s
}

#[test]
fn stationary_locator_lifetime_tracks_the_model() {
    let config = ScenarioConfig::from_toml(&interval_scenario(60, 14, 1)).unwrap();
    let mut sim = Simulation::new(config, StoreMode::Memory).unwrap();
    sim.run().unwrap();
    let summary = sim.summary().unwrap();
    let got = summary.locators[0].lifetime_minutes.expect("depleted");
    let want = predict_lifetime(&BatteryModel::reference(), 1.0);
    assert!((got - want).abs() / want < 0.05, "{got} vs {want}");
    // it stops answering after depletion, so later jobs time out
    assert!(summary.jobs.timed_out > 0);
    assert_eq!(summary.jobs.completed, summary.locators[0].replies);
}

#[test]
fn same_seed_replays_identically() {
    let run = || {
        let config = ScenarioConfig::from_toml(&interval_scenario(300, 6, 3)).unwrap();
        let mut sim = Simulation::new(config, StoreMode::Memory).unwrap();
        sim.run().unwrap();
        (sim.log().to_vec(), sim.summary().unwrap())
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert!(sa.jobs.completed > 100);
}

#[test]
fn restart_keeps_committed_positions() {
    let dir = tempfile::tempdir().unwrap();
    let config = ScenarioConfig::from_toml(&interval_scenario(120, 4, 2)).unwrap();
    let mid = config.start + Duration::minutes(91);
    let mut sim = Simulation::new(config, StoreMode::Journal(dir.path().to_owned())).unwrap();
    sim.run_until(mid).unwrap();
    let before = sim.engine().store().scan(Namespace::Positions).unwrap();
    assert!(!before.is_empty());
    sim.restart(true).unwrap();
    let after = sim.engine().store().scan(Namespace::Positions).unwrap();
    assert_eq!(before, after);
    sim.run().unwrap();
    let summary = sim.summary().unwrap();
    assert!(summary.positions > before.len());
    assert_eq!(summary.jobs.sent, summary.jobs.completed + summary.jobs.timed_out + summary.jobs.outstanding);

    let out = tempfile::tempdir().unwrap();
    sim.write_outputs(out.path()).unwrap();
    let events = std::fs::read_to_string(out.path().join("events.jsonl")).unwrap();
    assert!(events.lines().any(|l| l.contains("engine_restarted")));
    assert!(out.path().join("store.tar").metadata().unwrap().len() > 0);
}

#[test]
fn restart_needs_a_journal() {
    let config = ScenarioConfig::from_toml(&interval_scenario(120, 1, 1)).unwrap();
    let mut sim = Simulation::new(config, StoreMode::Memory).unwrap();
    assert!(sim.restart(false).is_err());
}

#[test]
fn fix_errors_follow_the_calibrated_mixture() {
    let t0 = Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap();
    let mut spec = LocatorSpec::stationary("a", "356000000000001", "+60123450001", 5.41, 118.03);
    spec.fix_success_prob = 1.0;
    spec.incomplete_prob = 0.0;
    let battery = BatteryModel::new(1e9, 1e-6, 1e-6).unwrap();
    let mut l = VirtualLocator::new(spec, &battery, 5, 0, t0).unwrap();
    let n = 20_000;
    let (mut in5, mut in10) = (0, 0);
    for i in 0..n {
        let r = l.respond_to_locate(t0 + Duration::seconds(i)).unwrap();
        assert_eq!(r.kind, MessageKind::Fix);
        let parsed = parse_tracker_response(&r.body);
        let fix = parsed.report().unwrap();
        let d = haversine_m(5.41, 118.03, fix.latitude, fix.longitude);
        in5 += (d <= 5.0) as u32;
        in10 += (d <= 10.0) as u32;
    }
    let (p5, p10) = (in5 as f64 / n as f64, in10 as f64 / n as f64);
    assert!((p5 - 0.756).abs() < 0.02, "{p5}");
    assert!((p10 - 0.931).abs() < 0.02, "{p10}");
}
