//! `GET /events`: server-sent events, one persisted [`EventRecord`] each.
//!
//! The SSE `id` is the record's sequence number. A client resumes with
//! `?since=<seq>` or the standard `Last-Event-ID` header and receives every
//! later record exactly once, in order. Without either it receives only
//! records created after it connected.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::State;
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures::{Stream, StreamExt};
use serde::Deserialize;
use tokio::sync::broadcast::{self, error::RecvError};

use smstrack_core::events::{EventLog, EventRecord};
use smstrack_core::store::StorePort;

use crate::error::{ApiError, QueryArgs};
use crate::AppState;

const PAGE: usize = 256;

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    pub since: Option<u64>,
}

struct Tail {
    rx: broadcast::Receiver<EventRecord>,
    store: Arc<dyn StorePort>,
    last: u64,
    backlog: VecDeque<EventRecord>,
    /// The store may hold records after `last` that the channel will not
    /// deliver.
    behind: bool,
}

impl Tail {
    async fn next(&mut self) -> Option<EventRecord> {
        loop {
            if self.backlog.is_empty() && self.behind {
                let page = match EventLog::open(self.store.clone()).and_then(|log| log.after(self.last, PAGE)) {
                    Ok(p) => p,
                    Err(e) => {
                        log::error!("event stream: {e}");
                        return None;
                    }
                };
                self.behind = page.len() == PAGE;
                self.backlog.extend(page);
            }
            if let Some(r) = self.backlog.pop_front() {
                if r.seq > self.last {
                    self.last = r.seq;
                    return Some(r);
                }
                continue;
            }
            match self.rx.recv().await {
                Ok(r) if r.seq <= self.last => continue,
                Ok(r) if r.seq == self.last + 1 => {
                    self.last = r.seq;
                    return Some(r);
                }
                Ok(_) | Err(RecvError::Lagged(_)) => self.behind = true,
                Err(RecvError::Closed) => return None,
            }
        }
    }
}

fn to_sse(record: &EventRecord) -> Event {
    Event::default()
        .id(record.seq.to_string())
        .event(record.event.name())
        .data(serde_json::to_string(record).expect("serializable"))
}

pub async fn events(
    State(state): State<AppState>,
    headers: HeaderMap,
    QueryArgs(q): QueryArgs<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    // subscribe before reading the log so nothing falls in between
    let rx = state.events.subscribe();
    let resume = match headers.get("last-event-id") {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| ApiError::invalid(Some("Last-Event-ID"), "must be a sequence number"))?,
        ),
        None => q.since,
    };
    let last = match resume {
        Some(seq) => seq,
        None => EventLog::open(state.store.clone())?.last_seq(),
    };
    let tail = Tail {
        rx,
        store: state.store.clone(),
        last,
        backlog: VecDeque::new(),
        behind: true,
    };
    let mut shutdown = state.shutdown.clone();
    let stream = futures::stream::unfold(tail, |mut t| async move { t.next().await.map(|r| (Ok(to_sse(&r)), t)) })
        .take_until(async move {
            let _ = shutdown.wait_for(|stop| *stop).await;
        });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
