//! Sequenced, persisted record of observable state changes. Clients resume
//! by sequence number.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::LocateJob;
use crate::ids::ScheduleId;
use crate::pipeline::Position;
use crate::store::{decode, ordered_u64, Namespace, StoreError, StoreExt, StorePort, WriteBatch};

const NEXT_SEQ_KEY: &str = "next_event_seq";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    PositionIngested {
        position: Position,
    },
    JobStateChanged {
        job: LocateJob,
    },
    ScheduleFired {
        schedule_id: ScheduleId,
        fire_at: DateTime<Utc>,
        in_window: bool,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::PositionIngested { .. } => "position_ingested",
            Event::JobStateChanged { .. } => "job_state_changed",
            Event::ScheduleFired { .. } => "schedule_fired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Starts at 1, no gaps.
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: Event,
}

pub struct EventLog {
    store: Arc<dyn StorePort>,
    next_seq: u64,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("next_seq", &self.next_seq).finish()
    }
}

impl EventLog {
    pub fn open(store: Arc<dyn StorePort>) -> Result<Self, StoreError> {
        let next_seq = store.get_json(Namespace::Meta, NEXT_SEQ_KEY)?.unwrap_or(1);
        Ok(Self { store, next_seq })
    }

    /// Sequence number of the newest record, 0 when empty.
    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn append(&mut self, at: DateTime<Utc>, events: Vec<Event>) -> Result<Vec<EventRecord>, StoreError> {
        if events.is_empty() {
            return Ok(Vec::new());
        }
        let records: Vec<EventRecord> = events
            .into_iter()
            .enumerate()
            .map(|(i, event)| EventRecord {
                seq: self.next_seq + i as u64,
                at,
                event,
            })
            .collect();
        let mut batch = WriteBatch::new();
        for r in &records {
            batch.put(Namespace::Events, ordered_u64(r.seq), r)?;
        }
        let next = self.next_seq + records.len() as u64;
        batch.put(Namespace::Meta, NEXT_SEQ_KEY, &next)?;
        self.store.commit(batch)?;
        self.next_seq = next;
        Ok(records)
    }

    /// Records with `seq > after`, oldest first.
    pub fn after(&self, after: u64, limit: usize) -> Result<Vec<EventRecord>, StoreError> {
        self.store
            .scan_after(Namespace::Events, &ordered_u64(after), limit)?
            .iter()
            .map(|(k, v)| decode(Namespace::Events, k, v))
            .collect()
    }
}
