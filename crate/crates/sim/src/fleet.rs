//! A set of virtual locators behind an in-process SMS network.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use smstrack_core::clock::Clock;
use smstrack_core::codec::MessageKind;
use smstrack_core::energy::BatteryModel;
use smstrack_core::gateway::{check_body, InboundSms, OutboundSms, TransportError, TransportPort};
use smstrack_core::registry::normalize_phone;

use crate::locator::{LocatorSpec, VirtualLocator};

#[derive(Debug, Default)]
struct Network {
    outbox: Vec<OutboundSms>,
    /// Pending deliveries keyed by (deliver_at, sequence).
    inbox: BTreeMap<(DateTime<Utc>, u64), InboundSms>,
    seq: u64,
}

/// Gateway side of the loopback network. Replies become visible once the
/// clock reaches their delivery time.
pub struct LoopbackTransport {
    net: Arc<Mutex<Network>>,
    clock: Arc<dyn Clock>,
}

impl TransportPort for LoopbackTransport {
    fn send(&mut self, sms: &OutboundSms) -> Result<(), TransportError> {
        check_body(&sms.body)?;
        self.net.lock().expect("network lock").outbox.push(sms.clone());
        Ok(())
    }

    fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError> {
        let now = self.clock.now();
        let mut net = self.net.lock().expect("network lock");
        let later = net.inbox.split_off(&(now, u64::MAX));
        let due = std::mem::replace(&mut net.inbox, later);
        Ok(due.into_values().collect())
    }
}

/// Something that happened on the locator side.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FleetEvent {
    LocateAnswered {
        label: String,
        at: DateTime<Utc>,
        reply: MessageKind,
        latency_secs: f64,
    },
    LocateIgnored {
        label: String,
        at: DateTime<Utc>,
        reason: String,
    },
    LocatorDepleted {
        label: String,
        at: DateTime<Utc>,
    },
    Undeliverable {
        to: String,
        at: DateTime<Utc>,
    },
}

impl FleetEvent {
    pub fn at(&self) -> DateTime<Utc> {
        match self {
            FleetEvent::LocateAnswered { at, .. }
            | FleetEvent::LocateIgnored { at, .. }
            | FleetEvent::LocatorDepleted { at, .. }
            | FleetEvent::Undeliverable { at, .. } => *at,
        }
    }
}

pub struct Fleet {
    locators: Vec<VirtualLocator>,
    by_phone: HashMap<String, usize>,
    net: Arc<Mutex<Network>>,
}

impl Fleet {
    /// Locator `i` draws from stream `i` of `seed`.
    pub fn new(specs: &[LocatorSpec], battery: &BatteryModel, seed: u64, start: DateTime<Utc>) -> Result<Self, String> {
        let mut locators = Vec::with_capacity(specs.len());
        let mut by_phone = HashMap::new();
        for (i, spec) in specs.iter().enumerate() {
            let locator = VirtualLocator::new(spec.clone(), battery, seed, i as u64, start)
                .map_err(|e| format!("locator {}: {e}", spec.label))?;
            if by_phone.insert(normalize_phone(&spec.phone_number), i).is_some() {
                return Err(format!("locator {}: duplicate phone number", spec.label));
            }
            locators.push(locator);
        }
        Ok(Self {
            locators,
            by_phone,
            net: Arc::default(),
        })
    }

    pub fn transport(&self, clock: Arc<dyn Clock>) -> LoopbackTransport {
        LoopbackTransport {
            net: self.net.clone(),
            clock,
        }
    }

    pub fn locators(&self) -> &[VirtualLocator] {
        &self.locators
    }

    /// Deliver queued commands, schedule replies, and drain batteries to `now`.
    pub fn step(&mut self, now: DateTime<Utc>) -> Vec<FleetEvent> {
        let outbox = std::mem::take(&mut self.net.lock().expect("network lock").outbox);
        let mut events = Vec::new();
        for sms in outbox {
            let Some(&i) = self.by_phone.get(&normalize_phone(&sms.to)) else {
                events.push(FleetEvent::Undeliverable { to: sms.to, at: sms.submitted_at });
                continue;
            };
            let locator = &mut self.locators[i];
            let label = locator.spec().label.clone();
            if let Some(at) = locator.drain_to(sms.submitted_at) {
                events.push(FleetEvent::LocatorDepleted { label: label.clone(), at });
            }
            if !locator.accepts(&sms.body) {
                events.push(FleetEvent::LocateIgnored {
                    label,
                    at: sms.submitted_at,
                    reason: "wrong password".into(),
                });
                continue;
            }
            let was_alive = locator.depleted_at().is_none();
            match locator.respond_to_locate(sms.submitted_at) {
                Some(reply) => {
                    let deliver_at = sms.submitted_at + Duration::microseconds((reply.delay_secs * 1e6).round() as i64);
                    let inbound = InboundSms {
                        from: locator.spec().phone_number.clone(),
                        body: reply.body,
                        received_at: deliver_at,
                    };
                    let mut net = self.net.lock().expect("network lock");
                    let seq = net.seq;
                    net.seq += 1;
                    net.inbox.insert((deliver_at, seq), inbound);
                    events.push(FleetEvent::LocateAnswered {
                        label,
                        at: sms.submitted_at,
                        reply: reply.kind,
                        latency_secs: reply.delay_secs,
                    });
                }
                None => {
                    if was_alive {
                        events.push(FleetEvent::LocatorDepleted {
                            label: label.clone(),
                            at: sms.submitted_at,
                        });
                    }
                    events.push(FleetEvent::LocateIgnored {
                        label,
                        at: sms.submitted_at,
                        reason: "battery depleted".into(),
                    });
                }
            }
        }
        for locator in &mut self.locators {
            if let Some(at) = locator.drain_to(now) {
                events.push(FleetEvent::LocatorDepleted {
                    label: locator.spec().label.clone(),
                    at,
                });
            }
        }
        events.sort_by_key(FleetEvent::at);
        events
    }

    /// Next reply delivery or battery depletion.
    pub fn next_event_time(&self) -> Option<DateTime<Utc>> {
        let delivery = self.net.lock().expect("network lock").inbox.keys().next().map(|k| k.0);
        self.locators
            .iter()
            .filter_map(VirtualLocator::depletion_eta)
            .chain(delivery)
            .min()
    }

    /// Commands sent but not yet handed to a locator.
    pub fn has_pending_commands(&self) -> bool {
        !self.net.lock().expect("network lock").outbox.is_empty()
    }
}
