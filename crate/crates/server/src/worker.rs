//! The engine thread. Every mutation runs here, one at a time, between
//! ticks; handlers submit closures and await the result.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Duration, Utc};
use tokio::sync::{broadcast, oneshot};

use smstrack_core::clock::Clock;
use smstrack_core::engine::Engine;
use smstrack_core::events::EventRecord;
use smstrack_sim::Fleet;

use crate::error::ApiError;

type Task = Box<dyn FnOnce(&mut Core) + Send>;

pub struct Core {
    pub engine: Engine,
    clock: Arc<dyn Clock>,
    fleet: Option<Fleet>,
    published: u64,
    events: broadcast::Sender<EventRecord>,
}

impl Core {
    pub fn new(engine: Engine, clock: Arc<dyn Clock>, fleet: Option<Fleet>, events: broadcast::Sender<EventRecord>) -> Self {
        Self {
            published: engine.events().last_seq(),
            engine,
            clock,
            fleet,
            events,
        }
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn step_fleet(&mut self, now: DateTime<Utc>) {
        if let Some(fleet) = &mut self.fleet {
            for e in fleet.step(now) {
                log::debug!("fleet: {e:?}");
            }
        }
    }

    fn tick(&mut self) {
        let now = self.now();
        self.step_fleet(now);
        if let Err(e) = self.engine.tick(now) {
            log::error!("engine tick failed: {e}");
        }
        self.step_fleet(now);
    }

    /// Broadcast every persisted event not yet sent, in sequence order.
    fn publish(&mut self) {
        loop {
            let batch = match self.engine.events().after(self.published, 512) {
                Ok(b) => b,
                Err(e) => {
                    log::error!("reading event log: {e}");
                    return;
                }
            };
            if batch.is_empty() {
                return;
            }
            for record in batch {
                self.published = record.seq;
                // no subscribers is fine
                let _ = self.events.send(record);
            }
        }
    }

    fn next_wakeup(&self, poll: Duration) -> DateTime<Utc> {
        let fleet = self.fleet.as_ref().and_then(Fleet::next_event_time);
        [self.engine.next_wakeup(), fleet, Some(self.now() + poll)]
            .into_iter()
            .flatten()
            .min()
            .expect("poll deadline present")
    }
}

#[derive(Clone)]
pub struct EngineHandle {
    tx: mpsc::Sender<Task>,
}

impl EngineHandle {
    /// Run `f` on the engine thread.
    pub async fn call<R: Send + 'static>(&self, f: impl FnOnce(&mut Core) -> R + Send + 'static) -> Result<R, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Box::new(move |core: &mut Core| {
                let _ = reply.send(f(core));
            }))
            .map_err(|_| ApiError::unavailable("engine stopped"))?;
        rx.await.map_err(|_| ApiError::internal("engine dropped the request"))
    }
}

/// Start the loop. It exits once every handle is dropped.
pub fn spawn(mut core: Core, poll_interval: Duration) -> (EngineHandle, JoinHandle<()>) {
    let (tx, rx) = mpsc::channel::<Task>();
    let thread = std::thread::Builder::new()
        .name("smstrack-engine".into())
        .spawn(move || loop {
            core.tick();
            core.publish();
            let wait = (core.next_wakeup(poll_interval) - core.now())
                .to_std()
                .unwrap_or(std::time::Duration::ZERO);
            match rx.recv_timeout(wait) {
                Ok(task) => {
                    task(&mut core);
                    core.publish();
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        })
        .expect("spawn engine thread");
    (EngineHandle { tx }, thread)
}
