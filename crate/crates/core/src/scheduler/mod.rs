//! When to send locate commands, and to whom.
//!
//! Three schedule kinds: a one-shot date, a fixed interval, and a cron
//! expression. Each can carry an activation window; fire instants outside the
//! window are dropped, not deferred. Fires missed while the server was down
//! are skipped.

pub mod cron;
pub mod window;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::cron::{next_fire, parse_cron, CronSpec, CronSyntaxError};
pub use self::window::{ActivationWindow, DaySet, TimeOfDay, WindowDraft, WindowError};
use crate::ids::{DeviceId, GroupId, ScheduleId};
use crate::registry::Registry;
use crate::store::{ordered_u64, Namespace, StoreError, StoreExt, StorePort, WriteBatch};

/// Shortest allowed interval: one request per minute.
pub const MIN_INTERVAL_SECS: u64 = 60;

const NEXT_SCHEDULE_KEY: &str = "next_schedule_id";

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Cron(#[from] CronSyntaxError),
    #[error("interval of {0} s is below the {MIN_INTERVAL_SECS} s minimum")]
    IntervalTooShort(u64),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("date schedule at {0} has no future occurrence")]
    NoFutureOccurrence(DateTime<Utc>),
    #[error("schedule target {0:?} does not exist")]
    UnknownTarget(Target),
    #[error("unknown schedule {0}")]
    UnknownSchedule(ScheduleId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ScheduleError {
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ScheduleError::Cron(_) => Some("expr"),
            ScheduleError::IntervalTooShort(_) => Some("every_secs"),
            ScheduleError::Window(_) => Some("window"),
            ScheduleError::NoFutureOccurrence(_) => Some("at"),
            ScheduleError::UnknownTarget(_) => Some("target"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Device(DeviceId),
    Group(GroupId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Date {
        at: DateTime<Utc>,
    },
    /// Fires at `anchor + k * every_secs` for every integer `k >= 0`.
    Interval {
        every_secs: u64,
        anchor: DateTime<Utc>,
    },
    Cron {
        expr: CronSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub id: ScheduleId,
    #[serde(flatten)]
    pub kind: ScheduleKind,
    pub target: Target,
    #[serde(default)]
    pub window: Option<ActivationWindow>,
    pub enabled: bool,
    /// Zone cron expressions are evaluated in.
    pub timezone: Tz,
}

impl Schedule {
    /// First raw fire instant strictly after `after`, ignoring the window.
    pub fn next_fire_after(&self, after: DateTime<Utc>) -> Option<DateTime<Utc>> {
        match &self.kind {
            ScheduleKind::Date { at } => (*at > after).then_some(*at),
            ScheduleKind::Interval { every_secs, anchor } => {
                if *anchor > after {
                    return Some(*anchor);
                }
                let every = *every_secs as i64 * 1_000_000;
                let elapsed = (after - *anchor).num_microseconds()?;
                let k = elapsed / every + 1;
                Some(*anchor + Duration::microseconds(k * every))
            }
            ScheduleKind::Cron { expr } => next_fire(expr, after, &self.timezone),
        }
    }

    /// Raw fire instants in `[from, to)`, ignoring the window.
    pub fn fire_instants(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        let mut cursor = from - Duration::microseconds(1);
        std::iter::from_fn(move || {
            let next = self.next_fire_after(cursor)?;
            (next < to).then(|| {
                cursor = next;
                next
            })
        })
    }

    /// Whether a fire at `t` would be allowed by the window.
    pub fn window_allows(&self, t: DateTime<Utc>) -> bool {
        self.window.as_ref().is_none_or(|w| w.contains(t))
    }

    /// Fire instants in `[from, to)` that pass the window.
    pub fn windowed_instants(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        self.fire_instants(from, to).filter(|t| self.window_allows(*t))
    }
}

/// Number of requests `schedule` issues in `[from, from + horizon)`.
pub fn estimate_request_count(schedule: &Schedule, from: DateTime<Utc>, horizon: Duration) -> u64 {
    schedule.windowed_instants(from, from + horizon).count() as u64
}

/// Untrusted schedule description as submitted by operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDraft {
    #[serde(flatten)]
    pub kind: KindDraft,
    pub target: Target,
    #[serde(default)]
    pub window: Option<WindowDraft>,
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub timezone: Option<Tz>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KindDraft {
    Date {
        at: DateTime<Utc>,
    },
    Interval {
        every_secs: u64,
        #[serde(default)]
        anchor: Option<DateTime<Utc>>,
    },
    Cron {
        expr: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchedulePatch {
    pub enabled: Option<bool>,
    /// `Some(None)` clears the window.
    #[serde(default, with = "double_option")]
    pub window: Option<Option<WindowDraft>>,
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(v: &Option<Option<T>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(inner) => inner.serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Option<Option<T>>, D::Error> {
        Option::<T>::deserialize(d).map(Some)
    }
}

/// Request to locate one device, produced when a schedule fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRequest {
    pub device_id: DeviceId,
    pub fire_at: DateTime<Utc>,
    pub origin: JobOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOrigin {
    Schedule(ScheduleId),
    Manual,
}

/// A schedule fire observed during [`Scheduler::advance`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleFired {
    pub schedule_id: ScheduleId,
    pub fire_at: DateTime<Utc>,
    pub in_window: bool,
}

pub struct Scheduler {
    store: Arc<dyn StorePort>,
    schedules: BTreeMap<ScheduleId, Schedule>,
    /// Fires at or before the cursor have been handled (or skipped).
    cursors: HashMap<ScheduleId, DateTime<Utc>>,
    next_id: u64,
    default_zone: Tz,
}

impl std::fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scheduler")
            .field("schedules", &self.schedules.len())
            .field("default_zone", &self.default_zone)
            .finish()
    }
}

impl Scheduler {
    /// Load schedules. Anything that would have fired before `now` is skipped.
    pub fn open(store: Arc<dyn StorePort>, default_zone: Tz, now: DateTime<Utc>) -> Result<Self, ScheduleError> {
        let schedules: BTreeMap<ScheduleId, Schedule> = store
            .scan_json::<Schedule>(Namespace::Schedules)?
            .into_iter()
            .map(|s| (s.id, s))
            .collect();
        let cursors = schedules.keys().map(|id| (*id, now)).collect();
        let fallback = schedules.keys().last().map_or(1, |id| id.0 + 1);
        let next_id = store
            .get_json::<u64>(Namespace::Meta, NEXT_SCHEDULE_KEY)?
            .unwrap_or(fallback)
            .max(fallback);
        Ok(Self {
            store,
            schedules,
            cursors,
            next_id,
            default_zone,
        })
    }

    pub fn default_zone(&self) -> Tz {
        self.default_zone
    }

    /// Validate a draft into a schedule without storing it.
    pub fn build(&self, id: ScheduleId, draft: &ScheduleDraft, now: DateTime<Utc>) -> Result<Schedule, ScheduleError> {
        let timezone = draft.timezone.unwrap_or(self.default_zone);
        let kind = match &draft.kind {
            KindDraft::Date { at } => {
                if *at <= now {
                    return Err(ScheduleError::NoFutureOccurrence(*at));
                }
                ScheduleKind::Date { at: *at }
            }
            KindDraft::Interval { every_secs, anchor } => {
                if *every_secs < MIN_INTERVAL_SECS {
                    return Err(ScheduleError::IntervalTooShort(*every_secs));
                }
                ScheduleKind::Interval {
                    every_secs: *every_secs,
                    anchor: anchor.unwrap_or(now),
                }
            }
            KindDraft::Cron { expr } => ScheduleKind::Cron {
                expr: parse_cron(expr)?,
            },
        };
        let window = draft
            .window
            .as_ref()
            .map(|w| w.resolve(self.default_zone))
            .transpose()?;
        Ok(Schedule {
            id,
            kind,
            target: draft.target,
            window,
            enabled: draft.enabled,
            timezone,
        })
    }

    pub fn create(
        &mut self,
        draft: &ScheduleDraft,
        registry: &Registry,
        now: DateTime<Utc>,
    ) -> Result<Schedule, ScheduleError> {
        let exists = match draft.target {
            Target::Device(d) => registry.device(d).is_some(),
            Target::Group(g) => registry.group(g).is_some(),
        };
        if !exists {
            return Err(ScheduleError::UnknownTarget(draft.target));
        }
        let schedule = self.build(ScheduleId(self.next_id), draft, now)?;

        let mut batch = WriteBatch::new();
        batch.put(Namespace::Schedules, ordered_u64(schedule.id.0), &schedule)?;
        batch.put(Namespace::Meta, NEXT_SCHEDULE_KEY, &(self.next_id + 1))?;
        self.store.commit(batch)?;

        self.next_id += 1;
        // a fire exactly at creation time counts
        self.cursors.insert(schedule.id, now - Duration::microseconds(1));
        self.schedules.insert(schedule.id, schedule.clone());
        Ok(schedule)
    }

    pub fn update(&mut self, id: ScheduleId, patch: &SchedulePatch) -> Result<Schedule, ScheduleError> {
        let mut schedule = self.get(id).cloned().ok_or(ScheduleError::UnknownSchedule(id))?;
        if let Some(enabled) = patch.enabled {
            schedule.enabled = enabled;
        }
        if let Some(window) = &patch.window {
            schedule.window = window.as_ref().map(|w| w.resolve(self.default_zone)).transpose()?;
        }
        self.store
            .put_json(Namespace::Schedules, &ordered_u64(id.0), &schedule)?;
        self.schedules.insert(id, schedule.clone());
        Ok(schedule)
    }

    pub fn delete(&mut self, id: ScheduleId) -> Result<Schedule, ScheduleError> {
        if !self.schedules.contains_key(&id) {
            return Err(ScheduleError::UnknownSchedule(id));
        }
        let mut batch = WriteBatch::new();
        batch.delete(Namespace::Schedules, ordered_u64(id.0));
        self.store.commit(batch)?;
        self.cursors.remove(&id);
        Ok(self.schedules.remove(&id).expect("checked"))
    }

    pub fn get(&self, id: ScheduleId) -> Option<&Schedule> {
        self.schedules.get(&id)
    }

    pub fn schedules(&self) -> impl Iterator<Item = &Schedule> {
        self.schedules.values()
    }

    /// Latest raw fire in `(cursor, now]`, skipping older missed ones.
    fn pending_fire(&self, schedule: &Schedule, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
        let cursor = *self.cursors.get(&schedule.id)?;
        if !schedule.enabled {
            return None;
        }
        if let ScheduleKind::Interval { every_secs, anchor } = &schedule.kind {
            if now < *anchor {
                return None;
            }
            let every = *every_secs as i64 * 1_000_000;
            let k = (now - *anchor).num_microseconds()? / every;
            let latest = *anchor + Duration::microseconds(k * every);
            return (latest > cursor).then_some(latest);
        }
        let mut latest = None;
        let mut t = cursor;
        while let Some(next) = schedule.next_fire_after(t) {
            if next > now {
                break;
            }
            latest = Some(next);
            t = next;
        }
        latest
    }

    fn expand(&self, target: Target, registry: &Registry) -> Vec<DeviceId> {
        match target {
            Target::Device(d) => registry.device(d).map(|d| vec![d.id]).unwrap_or_default(),
            Target::Group(g) => registry
                .group_members(g)
                .map(|m| m.into_iter().map(|d| d.id).collect())
                .unwrap_or_default(),
        }
    }

    /// Jobs that should be dispatched at `now`. Does not change state; call
    /// [`Scheduler::advance`] afterwards.
    ///
    /// One job per (schedule, member device) whose latest fire is due and
    /// inside its window. Devices for which `outstanding` holds, or that
    /// already got a job from an earlier schedule in this call, are skipped.
    pub fn due_jobs(
        &self,
        now: DateTime<Utc>,
        registry: &Registry,
        outstanding: impl Fn(DeviceId) -> bool,
    ) -> Vec<JobRequest> {
        let mut taken = BTreeSet::new();
        let mut jobs = Vec::new();
        for schedule in self.schedules.values() {
            let Some(fire_at) = self.pending_fire(schedule, now) else {
                continue;
            };
            if !schedule.window_allows(fire_at) {
                continue;
            }
            for device_id in self.expand(schedule.target, registry) {
                if outstanding(device_id) || !taken.insert(device_id) {
                    continue;
                }
                jobs.push(JobRequest {
                    device_id,
                    fire_at,
                    origin: JobOrigin::Schedule(schedule.id),
                });
            }
        }
        jobs
    }

    /// Mark everything up to `now` as handled and report what fired.
    pub fn advance(&mut self, now: DateTime<Utc>) -> Vec<ScheduleFired> {
        let fired: Vec<ScheduleFired> = self
            .schedules
            .values()
            .filter_map(|s| {
                self.pending_fire(s, now).map(|fire_at| ScheduleFired {
                    schedule_id: s.id,
                    fire_at,
                    in_window: s.window_allows(fire_at),
                })
            })
            .collect();
        for cursor in self.cursors.values_mut() {
            if *cursor < now {
                *cursor = now;
            }
        }
        fired
    }

    /// Earliest instant at which some enabled schedule next fires.
    pub fn next_wakeup(&self) -> Option<DateTime<Utc>> {
        self.schedules
            .values()
            .filter(|s| s.enabled)
            .filter_map(|s| s.next_fire_after(*self.cursors.get(&s.id)?))
            .min()
    }
}
