use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use smstrack_core::codec::{FixReport, TrackerMessage};
use smstrack_core::ids::{DeviceId, MessageId};
use smstrack_core::pipeline::{to_geojson, Pipeline};
use smstrack_core::registry::{NewDevice, Registry};
use smstrack_core::store::{snapshot_export, snapshot_import, Durability, JournalOptions, JournalStore, StorePort};

const IMEI: &str = "359710049887761";

fn t0() -> DateTime<Utc> {
    "2024-06-01T00:00:00Z".parse().unwrap()
}

fn seed(dir: &std::path::Path, n: u64) -> DeviceId {
    let store: Arc<dyn StorePort> = Arc::new(
        JournalStore::open_with(dir, JournalOptions { durability: Durability::Flush, compact_after: 40 }).unwrap(),
    );
    let mut reg = Registry::open(store.clone()).unwrap();
    let id = reg
        .register_device(NewDevice {
            imei: IMEI.into(),
            phone_number: "+60123456789".into(),
            password: "123456".into(),
            battery_capacity_mah: None,
            label: String::new(),
        })
        .unwrap()
        .id;
    let pipeline = Pipeline::new(store);
    for i in 0..n {
        let msg = TrackerMessage::Fix(FixReport::new(5.0 + i as f64 * 1e-4, 118.0, 10.0, 90, IMEI));
        pipeline.ingest(&reg, id, &msg, t0() + Duration::minutes(i as i64), MessageId(i + 1)).unwrap();
    }
    // dropped without any shutdown step: the process "dies" here
    id
}

fn reopen(dir: &std::path::Path) -> (Arc<dyn StorePort>, Registry, Pipeline) {
    let store: Arc<dyn StorePort> = Arc::new(JournalStore::open(dir).unwrap());
    let reg = Registry::open(store.clone()).unwrap();
    (store.clone(), reg, Pipeline::new(store))
}

#[test]
fn committed_positions_survive_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let id = seed(dir.path(), 100);

    // half-written record at the tail, as if killed mid-append
    let mut journal = OpenOptions::new().append(true).open(dir.path().join("journal.log")).unwrap();
    journal.write_all(b"deadbeef [{\"op\":\"put\",\"ns\":\"positions\",\"key\":\"x").unwrap();
    drop(journal);

    let (_, reg, pipeline) = reopen(dir.path());
    let track = pipeline.query_track(&reg, id, t0(), t0() + Duration::days(1)).unwrap();
    assert_eq!(track.len(), 100);
    assert!(track.windows(2).all(|w| w[0].server_time < w[1].server_time));
}

#[test]
fn snapshot_round_trip_preserves_queries() {
    let src = tempfile::tempdir().unwrap();
    let id = seed(src.path(), 25);
    let (store, reg, pipeline) = reopen(src.path());
    let before = pipeline.query_track(&reg, id, t0(), t0() + Duration::days(1)).unwrap();

    let archive = tempfile::tempdir().unwrap();
    let tar = archive.path().join("store.tar");
    snapshot_export(store.as_ref(), &tar).unwrap();
    let dest = tempfile::tempdir().unwrap();
    let imported: Arc<dyn StorePort> = Arc::new(snapshot_import(&tar, dest.path().join("db")).unwrap());
    let reg2 = Registry::open(imported.clone()).unwrap();
    let after = Pipeline::new(imported).query_track(&reg2, id, t0(), t0() + Duration::days(1)).unwrap();
    assert_eq!(before, after);
    assert_eq!(to_geojson(&before).to_string(), to_geojson(&after).to_string());

    // exporting twice gives identical bytes
    let again = archive.path().join("again.tar");
    snapshot_export(store.as_ref(), &again).unwrap();
    assert_eq!(std::fs::read(&tar).unwrap(), std::fs::read(&again).unwrap());
}
