//! One serialized loop over registry, scheduler, gateway and pipeline. Both
//! the server and the simulator drive it with [`Engine::tick`].

use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventLog, EventRecord};
use crate::gateway::{Gateway, GatewayError, LocateJob, TransportPort, DEFAULT_RESPONSE_TIMEOUT_SECS};
use crate::ids::DeviceId;
use crate::pipeline::{Pipeline, PipelineError, Position};
use crate::registry::{Registry, RegistryError};
use crate::scheduler::{JobOrigin, ScheduleError, Scheduler};
use crate::store::{StoreError, StorePort};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Zone for cron expressions and windows that name none.
    pub timezone: Tz,
    pub response_timeout: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            timezone: Tz::UTC,
            response_timeout: Duration::seconds(DEFAULT_RESPONSE_TIMEOUT_SECS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub device_id: DeviceId,
    pub label: String,
    pub last_position: Option<Position>,
    pub battery_percent: Option<u8>,
    pub outstanding_job: Option<LocateJob>,
    pub last_latency_secs: Option<f64>,
}

pub struct Engine {
    store: Arc<dyn StorePort>,
    registry: Registry,
    scheduler: Scheduler,
    gateway: Gateway,
    pipeline: Pipeline,
    events: EventLog,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("scheduler", &self.scheduler)
            .field("gateway", &self.gateway)
            .field("events", &self.events)
            .finish()
    }
}

impl Engine {
    pub fn open(
        store: Arc<dyn StorePort>,
        transport: Box<dyn TransportPort>,
        config: EngineConfig,
        now: DateTime<Utc>,
    ) -> Result<Self, EngineError> {
        Ok(Self {
            registry: Registry::open(store.clone())?,
            scheduler: Scheduler::open(store.clone(), config.timezone, now)?,
            gateway: Gateway::open(store.clone(), transport, config.response_timeout)?,
            pipeline: Pipeline::new(store.clone()),
            events: EventLog::open(store.clone())?,
            store,
        })
    }

    pub fn store(&self) -> &Arc<dyn StorePort> {
        &self.store
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut Registry {
        &mut self.registry
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    /// Scheduler plus the registry it validates targets against.
    pub fn scheduler_mut(&mut self) -> (&mut Scheduler, &Registry) {
        (&mut self.scheduler, &self.registry)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    /// Timeouts, then inbound traffic, then due schedules.
    pub fn tick(&mut self, now: DateTime<Utc>) -> Result<Vec<EventRecord>, EngineError> {
        let mut events = Vec::new();

        for job in self.gateway.expire_timeouts(now)? {
            events.push(Event::JobStateChanged { job });
        }

        match self.gateway.poll() {
            Ok(inbox) => {
                for sms in inbox {
                    let out = self.gateway.on_inbound(&sms, &self.registry, &self.pipeline)?;
                    if let Some(position) = out.position {
                        events.push(Event::PositionIngested { position });
                    }
                    if let Some(job) = out.completed {
                        events.push(Event::JobStateChanged { job });
                    }
                }
            }
            Err(e) => log::warn!("inbox poll failed: {e}"),
        }

        let gateway = &self.gateway;
        let due = self
            .scheduler
            .due_jobs(now, &self.registry, |d| gateway.outstanding(d).is_some());
        for fired in self.scheduler.advance(now) {
            events.push(Event::ScheduleFired {
                schedule_id: fired.schedule_id,
                fire_at: fired.fire_at,
                in_window: fired.in_window,
            });
        }
        for req in due {
            let Some(device) = self.registry.device(req.device_id) else {
                continue;
            };
            match self.gateway.dispatch_locate(device, req.origin, now) {
                Ok(job) => events.push(Event::JobStateChanged { job }),
                Err(GatewayError::TransportUnavailable(e)) => {
                    log::warn!("locate for device {} not sent: {e}", req.device_id)
                }
                Err(e) => return Err(e.into()),
            }
        }

        Ok(self.events.append(now, events)?)
    }

    /// Operator-triggered locate.
    pub fn locate_now(&mut self, device_id: DeviceId, now: DateTime<Utc>) -> Result<LocateJob, EngineError> {
        let device = self.registry.device(device_id).ok_or(EngineError::UnknownDevice(device_id))?;
        let job = self.gateway.dispatch_locate(device, JobOrigin::Manual, now)?;
        self.events.append(now, vec![Event::JobStateChanged { job: job.clone() }])?;
        Ok(job)
    }

    /// When `tick` next has scheduled work, ignoring inbound traffic.
    pub fn next_wakeup(&self) -> Option<DateTime<Utc>> {
        [self.scheduler.next_wakeup(), self.gateway.next_timeout()]
            .into_iter()
            .flatten()
            .min()
    }

    pub fn device_status(&self, device_id: DeviceId) -> Result<DeviceStatus, EngineError> {
        let device = self.registry.device(device_id).ok_or(EngineError::UnknownDevice(device_id))?;
        let last_position = self.pipeline.last_position(device_id)?;
        Ok(DeviceStatus {
            device_id,
            label: device.label.clone(),
            battery_percent: last_position.as_ref().and_then(|p| p.battery_percent),
            last_position,
            outstanding_job: self.gateway.outstanding(device_id).cloned(),
            last_latency_secs: self.gateway.last_completed(device_id)?.and_then(|j| j.latency_secs),
        })
    }

    pub fn fleet_status(&self) -> Result<Vec<DeviceStatus>, EngineError> {
        self.registry.devices().map(|d| self.device_status(d.id)).collect()
    }
}
