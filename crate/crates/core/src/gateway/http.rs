//! SMS gateway reachable over HTTP.
//!
//! ```text
//! POST {base}/sms                  {"to": "+6012...", "body": "smslink123456"}  -> any 2xx
//! GET  {base}/sms/inbox?since=<ts> -> [{"from": "...", "body": "...", "received_at": "<RFC 3339>"}]
//! ```
//!
//! `since` is exclusive. The first poll omits it. Inbox timestamps only drive
//! the cursor; messages are stamped with the local clock on arrival.

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Deserialize;
use serde_json::json;

use super::{check_body, InboundSms, OutboundSms, TransportError, TransportPort};
use crate::clock::Clock;

#[derive(Debug, Deserialize)]
struct InboxItem {
    from: String,
    body: String,
    received_at: DateTime<Utc>,
}

pub struct HttpModem {
    base: String,
    agent: ureq::Agent,
    clock: Arc<dyn Clock>,
    since: Option<DateTime<Utc>>,
}

impl HttpModem {
    pub fn new(base_url: &str, clock: Arc<dyn Clock>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(10)).build();
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            agent,
            clock,
            since: None,
        }
    }
}

fn unavailable(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Status(code, resp) => {
            TransportError::Unavailable(format!("gateway answered {code}: {}", resp.status_text()))
        }
        ureq::Error::Transport(t) => TransportError::Unavailable(t.to_string()),
    }
}

impl TransportPort for HttpModem {
    fn send(&mut self, sms: &OutboundSms) -> Result<(), TransportError> {
        check_body(&sms.body)?;
        self.agent
            .post(&format!("{}/sms", self.base))
            .send_json(json!({"to": sms.to, "body": sms.body}))
            .map_err(unavailable)?;
        Ok(())
    }

    fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError> {
        let mut req = self.agent.get(&format!("{}/sms/inbox", self.base));
        if let Some(since) = self.since {
            req = req.query("since", &since.to_rfc3339_opts(SecondsFormat::AutoSi, true));
        }
        let items: Vec<InboxItem> = req
            .call()
            .map_err(unavailable)?
            .into_json()
            .map_err(|e| TransportError::Protocol(format!("inbox is not a message list: {e}")))?;
        let now = self.clock.now();
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            if self.since.is_some_and(|s| item.received_at <= s) {
                continue;
            }
            out.push((item.received_at, InboundSms { from: item.from, body: item.body, received_at: now }));
        }
        if let Some(max) = out.iter().map(|(t, _)| *t).max() {
            self.since = Some(max);
        }
        Ok(out.into_iter().map(|(_, m)| m).collect())
    }
}
