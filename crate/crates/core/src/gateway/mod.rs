//! Outbound locate commands, inbound replies, and the per-device job slot
//! that ties them together.

pub mod at;
pub mod http;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode_locate_command, parse_tracker_response, CodecError, MessageKind, MAX_SMS_LEN};
use crate::ids::{DeviceId, JobId, MessageId, PositionId};
use crate::pipeline::{IngestOutcome, Pipeline, PipelineError, Position};
use crate::registry::{Device, Registry};
use crate::scheduler::JobOrigin;
use crate::store::{ordered_u64, Namespace, StoreError, StoreExt, StorePort, WriteBatch};

pub const DEFAULT_RESPONSE_TIMEOUT_SECS: i64 = 180;

const NEXT_JOB_KEY: &str = "next_job_id";
const NEXT_MESSAGE_KEY: &str = "next_message_id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundSms {
    pub to: String,
    pub body: String,
    pub submitted_at: DateTime<Utc>,
    pub job_id: JobId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboundSms {
    pub from: String,
    pub body: String,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transport unavailable: {0}")]
    Unavailable(String),
    #[error("body of {0} characters exceeds a single SMS")]
    BodyTooLong(usize),
    #[error("modem protocol error: {0}")]
    Protocol(String),
}

/// Access to the SMS network.
///
/// `send` submits at most once per call. `poll` drains received messages;
/// a message is returned by exactly one `poll`.
pub trait TransportPort: Send {
    fn send(&mut self, sms: &OutboundSms) -> Result<(), TransportError>;
    fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError>;
}

/// Reject bodies that do not fit one SMS.
pub fn check_body(body: &str) -> Result<(), TransportError> {
    let len = body.chars().count();
    if len > MAX_SMS_LEN {
        return Err(TransportError::BodyTooLong(len));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Sent,
    Completed,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateJob {
    pub id: JobId,
    pub device_id: DeviceId,
    pub origin: JobOrigin,
    pub state: JobState,
    pub submitted_at: DateTime<Utc>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
    /// Seconds from submission to the reply that completed the job.
    #[serde(default)]
    pub latency_secs: Option<f64>,
    #[serde(default)]
    pub position_id: Option<PositionId>,
}

/// One line of the inbound message log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedMessage {
    pub id: MessageId,
    pub from: String,
    pub body: String,
    pub received_at: DateTime<Utc>,
    pub kind: MessageKind,
    pub device_id: Option<DeviceId>,
    pub position_id: Option<PositionId>,
    pub job_id: Option<JobId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InboundOutcome {
    pub message: LoggedMessage,
    /// Newly stored position, if any.
    pub position: Option<Position>,
    pub completed: Option<LocateJob>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    TransportUnavailable(TransportError),
    #[error("device {device} already has outstanding job {job}")]
    DuplicateOutstanding { device: DeviceId, job: JobId },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn job_key(id: JobId) -> String {
    ordered_u64(id.0)
}

fn last_job_key(device: DeviceId) -> String {
    format!("last_completed_job/{}", ordered_u64(device.0))
}

pub struct Gateway {
    store: Arc<dyn StorePort>,
    transport: Box<dyn TransportPort>,
    outstanding: BTreeMap<DeviceId, LocateJob>,
    next_job_id: u64,
    next_message_id: u64,
    timeout: Duration,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("outstanding", &self.outstanding.len())
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl Gateway {
    /// Jobs still `Sent` in the store are outstanding again and will time
    /// out as usual.
    pub fn open(
        store: Arc<dyn StorePort>,
        transport: Box<dyn TransportPort>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let outstanding = store
            .scan_json::<LocateJob>(Namespace::Jobs)?
            .into_iter()
            .filter(|j| j.state == JobState::Sent)
            .map(|j| (j.device_id, j))
            .collect();
        let next_job_id = store.get_json(Namespace::Meta, NEXT_JOB_KEY)?.unwrap_or(1);
        let next_message_id = store.get_json(Namespace::Meta, NEXT_MESSAGE_KEY)?.unwrap_or(1);
        Ok(Self {
            store,
            transport,
            outstanding,
            next_job_id,
            next_message_id,
            timeout,
        })
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn outstanding(&self, device: DeviceId) -> Option<&LocateJob> {
        self.outstanding.get(&device)
    }

    pub fn outstanding_jobs(&self) -> impl Iterator<Item = &LocateJob> {
        self.outstanding.values()
    }

    pub fn job(&self, id: JobId) -> Result<Option<LocateJob>, GatewayError> {
        Ok(self.store.get_json(Namespace::Jobs, &job_key(id))?)
    }

    /// Most recent completed job for `device`.
    pub fn last_completed(&self, device: DeviceId) -> Result<Option<LocateJob>, GatewayError> {
        Ok(self.store.get_json(Namespace::Meta, &last_job_key(device))?)
    }

    /// Send the locate command to `device` and open its job slot.
    pub fn dispatch_locate(
        &mut self,
        device: &Device,
        origin: JobOrigin,
        now: DateTime<Utc>,
    ) -> Result<LocateJob, GatewayError> {
        if let Some(job) = self.outstanding.get(&device.id) {
            return Err(GatewayError::DuplicateOutstanding {
                device: device.id,
                job: job.id,
            });
        }
        let id = JobId(self.next_job_id);
        let sms = OutboundSms {
            to: device.phone_number.clone(),
            body: encode_locate_command(&device.password)?,
            submitted_at: now,
            job_id: id,
        };
        self.transport.send(&sms).map_err(GatewayError::TransportUnavailable)?;

        let job = LocateJob {
            id,
            device_id: device.id,
            origin,
            state: JobState::Sent,
            submitted_at: now,
            finished_at: None,
            latency_secs: None,
            position_id: None,
        };
        let mut batch = WriteBatch::new();
        batch.put(Namespace::Jobs, job_key(id), &job)?;
        batch.put(Namespace::Meta, NEXT_JOB_KEY, &(id.0 + 1))?;
        self.store.commit(batch)?;
        self.next_job_id += 1;
        self.outstanding.insert(device.id, job.clone());
        Ok(job)
    }

    pub fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError> {
        self.transport.poll()
    }

    /// Log, decode and route one received SMS. The log entry, any position
    /// and the job completion are committed together.
    pub fn on_inbound(
        &mut self,
        sms: &InboundSms,
        registry: &Registry,
        pipeline: &Pipeline,
    ) -> Result<InboundOutcome, GatewayError> {
        let id = MessageId(self.next_message_id);
        let msg = parse_tracker_response(&sms.body);
        let device = registry.resolve_by_phone(&sms.from);
        if device.is_none() {
            log::warn!("dropping SMS {id} from unregistered number {}", sms.from);
        }
        let mut batch = WriteBatch::new();
        let mut position = None;
        let mut completed = None;
        if let Some(device) = device {
            let (outcome, staged) = pipeline.prepare(registry, device.id, &msg, sms.received_at, id)?;
            batch.extend(staged);
            if let IngestOutcome::Stored(p) = outcome {
                if let Some(job) = self.outstanding.get(&device.id) {
                    let mut job = job.clone();
                    job.state = JobState::Completed;
                    job.finished_at = Some(sms.received_at);
                    job.latency_secs =
                        Some((sms.received_at - job.submitted_at).num_microseconds().unwrap_or(i64::MAX) as f64 / 1e6);
                    job.position_id = Some(p.position_id);
                    batch.put(Namespace::Jobs, job_key(job.id), &job)?;
                    batch.put(Namespace::Meta, last_job_key(device.id), &job)?;
                    completed = Some(job);
                }
                position = Some(p);
            }
        }
        let message = LoggedMessage {
            id,
            from: sms.from.clone(),
            body: sms.body.clone(),
            received_at: sms.received_at,
            kind: msg.kind(),
            device_id: device.map(|d| d.id),
            position_id: position.as_ref().map(|p: &Position| p.position_id),
            job_id: completed.as_ref().map(|j: &LocateJob| j.id),
        };
        batch.put(Namespace::Messages, ordered_u64(id.0), &message)?;
        batch.put(Namespace::Meta, NEXT_MESSAGE_KEY, &(id.0 + 1))?;
        self.store.commit(batch)?;

        self.next_message_id += 1;
        if let Some(job) = &completed {
            self.outstanding.remove(&job.device_id);
        }
        Ok(InboundOutcome {
            message,
            position,
            completed,
        })
    }

    /// Close every job that has waited longer than the timeout.
    pub fn expire_timeouts(&mut self, now: DateTime<Utc>) -> Result<Vec<LocateJob>, GatewayError> {
        let expired: Vec<LocateJob> = self
            .outstanding
            .values()
            .filter(|j| now - j.submitted_at > self.timeout)
            .map(|j| LocateJob {
                state: JobState::TimedOut,
                finished_at: Some(now),
                ..j.clone()
            })
            .collect();
        if expired.is_empty() {
            return Ok(expired);
        }
        let mut batch = WriteBatch::new();
        for job in &expired {
            batch.put(Namespace::Jobs, job_key(job.id), job)?;
        }
        self.store.commit(batch)?;
        for job in &expired {
            self.outstanding.remove(&job.device_id);
        }
        Ok(expired)
    }

    /// Earliest instant at which some outstanding job will have timed out.
    pub fn next_timeout(&self) -> Option<DateTime<Utc>> {
        self.outstanding
            .values()
            .map(|j| j.submitted_at + self.timeout + Duration::microseconds(1))
            .min()
    }

    /// All logged inbound messages with ids after `after`.
    pub fn messages_after(&self, after: MessageId, limit: usize) -> Result<Vec<LoggedMessage>, GatewayError> {
        self.store
            .scan_after(Namespace::Messages, &ordered_u64(after.0), limit)?
            .iter()
            .map(|(k, v)| crate::store::decode(Namespace::Messages, k, v).map_err(GatewayError::from))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::codec::{format_tracker_response, FixReport, TrackerMessage};
    use crate::registry::NewDevice;
    use crate::store::MemoryStore;
    use std::sync::Mutex;

    /// Records sends; replies are pushed by the test.
    #[derive(Clone, Default)]
    pub(crate) struct Recorder {
        pub sent: Arc<Mutex<Vec<OutboundSms>>>,
        pub inbox: Arc<Mutex<Vec<InboundSms>>>,
        pub down: Arc<Mutex<bool>>,
    }

    impl TransportPort for Recorder {
        fn send(&mut self, sms: &OutboundSms) -> Result<(), TransportError> {
            if *self.down.lock().unwrap() {
                return Err(TransportError::Unavailable("modem offline".into()));
            }
            check_body(&sms.body)?;
            self.sent.lock().unwrap().push(sms.clone());
            Ok(())
        }

        fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError> {
            Ok(std::mem::take(&mut *self.inbox.lock().unwrap()))
        }
    }

    const IMEI: &str = "359710049887761";
    const PHONE: &str = "+60123456789";

    fn t(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_717_200_000 + secs, 0).unwrap()
    }

    struct Fixture {
        store: Arc<dyn StorePort>,
        reg: Registry,
        pipeline: Pipeline,
        gw: Gateway,
        modem: Recorder,
        device: Device,
    }

    fn fixture() -> Fixture {
        let store: Arc<dyn StorePort> = Arc::new(MemoryStore::new());
        let mut reg = Registry::open(store.clone()).unwrap();
        let device = reg
            .register_device(NewDevice {
                imei: IMEI.into(),
                phone_number: PHONE.into(),
                password: "123456".into(),
                battery_capacity_mah: None,
                label: String::new(),
            })
            .unwrap();
        let modem = Recorder::default();
        let gw = Gateway::open(store.clone(), Box::new(modem.clone()), Duration::seconds(180)).unwrap();
        Fixture {
            pipeline: Pipeline::new(store.clone()),
            store,
            reg,
            gw,
            modem,
            device,
        }
    }

    fn reply(body: &str, at: DateTime<Utc>) -> InboundSms {
        InboundSms {
            from: PHONE.into(),
            body: body.into(),
            received_at: at,
        }
    }

    fn fix_body() -> String {
        format_tracker_response(&TrackerMessage::Fix(FixReport::new(5.41, 118.037, 0.0, 85, IMEI))).unwrap()
    }

    #[test]
    fn dispatch_sends_locate_command() {
        let mut f = fixture();
        let job = f.gw.dispatch_locate(&f.device, JobOrigin::Manual, t(0)).unwrap();
        let sent = f.modem.sent.lock().unwrap().clone();
        assert_eq!(sent.len(), 1);
        assert_eq!(sent[0].body, "smslink123456");
        assert_eq!(sent[0].to, PHONE);
        assert_eq!(job.state, JobState::Sent);
        assert!(matches!(
            f.gw.dispatch_locate(&f.device, JobOrigin::Manual, t(1)),
            Err(GatewayError::DuplicateOutstanding { .. })
        ));
        assert_eq!(f.modem.sent.lock().unwrap().len(), 1);
    }

    #[test]
    fn transport_down_records_nothing() {
        let mut f = fixture();
        *f.modem.down.lock().unwrap() = true;
        assert!(matches!(
            f.gw.dispatch_locate(&f.device, JobOrigin::Manual, t(0)),
            Err(GatewayError::TransportUnavailable(_))
        ));
        assert!(f.gw.outstanding(f.device.id).is_none());
        assert!(f.store.scan(Namespace::Jobs).unwrap().is_empty());
    }

    #[test]
    fn fix_completes_job() {
        let mut f = fixture();
        let job = f.gw.dispatch_locate(&f.device, JobOrigin::Manual, t(0)).unwrap();
        let out = f.gw.on_inbound(&reply(&fix_body(), t(37)), &f.reg, &f.pipeline).unwrap();
        let done = out.completed.unwrap();
        assert_eq!(done.id, job.id);
        assert_eq!(done.state, JobState::Completed);
        assert_eq!(done.latency_secs, Some(37.0));
        assert_eq!(done.position_id, out.position.as_ref().map(|p| p.position_id));
        assert!(f.gw.outstanding(f.device.id).is_none());
        assert_eq!(f.gw.job(job.id).unwrap().unwrap(), done);
        assert_eq!(f.gw.last_completed(f.device.id).unwrap().unwrap(), done);
        assert_eq!(out.message.kind, MessageKind::Fix);
    }

    #[test]
    fn unknown_sender_and_garbage() {
        let mut f = fixture();
        let stranger = InboundSms {
            from: "+441234567890".into(),
            body: fix_body(),
            received_at: t(0),
        };
        let out = f.gw.on_inbound(&stranger, &f.reg, &f.pipeline).unwrap();
        assert_eq!(out.message.device_id, None);
        assert!(out.position.is_none());

        f.gw.dispatch_locate(&f.device, JobOrigin::Manual, t(10)).unwrap();
        let out = f.gw.on_inbound(&reply("ERROR 17", t(20)), &f.reg, &f.pipeline).unwrap();
        assert_eq!(out.message.kind, MessageKind::Unrecognized);
        assert!(out.completed.is_none());
        assert!(f.gw.outstanding(f.device.id).is_some());

        let log = f.gw.messages_after(MessageId(0), 10).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].body, "ERROR 17");
    }

    #[test]
    fn timeouts() {
        let mut f = fixture();
        let job = f.gw.dispatch_locate(&f.device, JobOrigin::Manual, t(0)).unwrap();
        assert_eq!(f.gw.next_timeout(), Some(t(180) + Duration::microseconds(1)));
        assert!(f.gw.expire_timeouts(t(30)).unwrap().is_empty());
        assert!(f.gw.expire_timeouts(t(180)).unwrap().is_empty());
        let expired = f.gw.expire_timeouts(t(200)).unwrap();
        assert_eq!(expired.len(), 1);
        assert_eq!(expired[0].state, JobState::TimedOut);
        assert!(f.gw.outstanding(f.device.id).is_none());

        // late reply: stored as unsolicited, job stays timed out
        let out = f.gw.on_inbound(&reply(&fix_body(), t(210)), &f.reg, &f.pipeline).unwrap();
        assert!(out.position.is_some());
        assert!(out.completed.is_none());
        assert_eq!(f.gw.job(job.id).unwrap().unwrap().state, JobState::TimedOut);
    }

    #[test]
    fn outstanding_jobs_survive_reopen() {
        let mut f = fixture();
        let job = f.gw.dispatch_locate(&f.device, JobOrigin::Manual, t(0)).unwrap();
        let gw = Gateway::open(f.store.clone(), Box::new(Recorder::default()), Duration::seconds(180)).unwrap();
        assert_eq!(gw.outstanding(f.device.id), Some(&job));
        let mut gw = gw;
        let second = gw.dispatch_locate(&f.device, JobOrigin::Manual, t(500));
        assert!(second.is_err());
        gw.expire_timeouts(t(500)).unwrap();
        assert_eq!(gw.dispatch_locate(&f.device, JobOrigin::Manual, t(500)).unwrap().id, JobId(2));
    }

    #[test]
    fn body_limit() {
        assert!(check_body(&"x".repeat(160)).is_ok());
        assert_eq!(check_body(&"x".repeat(161)), Err(TransportError::BodyTooLong(161)));
    }
}
