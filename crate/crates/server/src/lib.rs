//! HTTP API over the smstrack engine.
//!
//! All endpoints speak JSON and need a bearer token except `/healthz`.
//! Mutations need an admin token. Errors are `{"error", "message", "field"}`
//! with status 401, 403, 404, 409, 422 or 503.

pub mod auth;
pub mod config;
pub mod error;
pub mod routes;
pub mod stream;
pub mod worker;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::Router;
use chrono::Duration;
use tokio::sync::{broadcast, watch};

use smstrack_core::clock::{Clock, SystemClock};
use smstrack_core::engine::{Engine, EngineConfig, EngineError};
use smstrack_core::events::EventRecord;
use smstrack_core::gateway::at::AtModem;
use smstrack_core::gateway::http::HttpModem;
use smstrack_core::gateway::{InboundSms, OutboundSms, TransportError, TransportPort};
use smstrack_core::store::{JournalStore, StoreError, StorePort};
use smstrack_sim::{Fleet, ScenarioConfig};

pub use auth::{Role, TokenTable};
pub use config::{ServerConfig, TransportKind};

#[derive(Clone)]
pub struct AppState {
    pub engine: worker::EngineHandle,
    pub store: Arc<dyn StorePort>,
    pub tokens: Arc<TokenTable>,
    pub events: broadcast::Sender<EventRecord>,
    pub shutdown: watch::Receiver<bool>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Tokens(#[from] auth::TokenError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Used when no SMS link is configured.
pub struct NullTransport;

impl TransportPort for NullTransport {
    fn send(&mut self, _: &OutboundSms) -> Result<(), TransportError> {
        Err(TransportError::Unavailable("no SMS transport configured".into()))
    }

    fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError> {
        Ok(Vec::new())
    }
}

pub fn router(state: AppState) -> Router {
    routes::router()
        .layer(axum::middleware::from_fn_with_state(state.clone(), auth::require_token))
        .with_state(state)
}

type Started = (Arc<dyn StorePort>, worker::EngineHandle, JoinHandle<()>);

/// Open the store, build the transport and start the engine thread.
fn start_engine(config: &ServerConfig, events: broadcast::Sender<EventRecord>) -> Result<Started, ServerError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let store: Arc<dyn StorePort> = Arc::new(JournalStore::open(&config.store_path)?);
    let engine_config = EngineConfig {
        timezone: config.timezone,
        response_timeout: Duration::seconds(config.response_timeout_secs as i64),
    };
    let now = clock.now();
    let mut fleet = None;
    let transport: Box<dyn TransportPort> = match &config.transport {
        TransportKind::None => Box::new(NullTransport),
        TransportKind::At { device } => {
            let port = std::fs::OpenOptions::new()
                .read(true)
                .write(true)
                .open(device)
                .map_err(|e| ServerError::Transport(format!("{}: {e}", device.display())))?;
            Box::new(AtModem::new(port, clock.clone()))
        }
        TransportKind::Http { base_url } => Box::new(HttpModem::new(base_url, clock.clone())),
        TransportKind::Loopback { scenario } => {
            let scenario = ScenarioConfig::load(scenario).map_err(|e| ServerError::Scenario(e.to_string()))?;
            let f = Fleet::new(&scenario.locators, &scenario.battery(), scenario.seed, now).map_err(ServerError::Scenario)?;
            let transport = Box::new(f.transport(clock.clone()));
            fleet = Some((f, scenario));
            transport
        }
    };
    let mut engine = Engine::open(store.clone(), transport, engine_config, now)?;
    let fleet = match fleet {
        Some((f, scenario)) => {
            // first start on an empty store: register the scenario's fleet
            if engine.registry().devices().next().is_none() {
                scenario
                    .install(&mut engine, now)
                    .map_err(|e| ServerError::Scenario(e.to_string()))?;
            }
            Some(f)
        }
        None => None,
    };
    let core = worker::Core::new(engine, clock, fleet, events);
    let (handle, thread) = worker::spawn(core, Duration::milliseconds(config.poll_interval_ms as i64));
    Ok((store, handle, thread))
}

/// A server running on a background thread.
pub struct RunningServer {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    thread: Option<JoinHandle<Result<(), ServerError>>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting requests, close event streams and wait for the engine
    /// thread to finish.
    pub fn shutdown(mut self) -> Result<(), ServerError> {
        let _ = self.stop.send(true);
        self.thread.take().map_or(Ok(()), |t| t.join().expect("server thread panicked"))
    }

    /// Block until the server stops by itself.
    pub fn wait(mut self) -> Result<(), ServerError> {
        self.thread.take().map_or(Ok(()), |t| t.join().expect("server thread panicked"))
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.stop.send(true);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Bind and serve on a background thread. Port 0 picks a free port.
pub fn start(config: ServerConfig) -> Result<RunningServer, ServerError> {
    let tokens = Arc::new(TokenTable::load(&config.token_file)?);
    let listener = std::net::TcpListener::bind(config.listen)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (events, _) = broadcast::channel(1024);
    let (store, engine, engine_thread) = start_engine(&config, events.clone())?;
    let (stop, shutdown) = watch::channel(false);
    let state = AppState {
        engine,
        store,
        tokens,
        events,
        shutdown: shutdown.clone(),
    };
    let thread = std::thread::Builder::new()
        .name("smstrack-http".into())
        .spawn(move || -> Result<(), ServerError> {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            let served = runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                let mut stop_rx = shutdown;
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async move {
                        let _ = stop_rx.wait_for(|s| *s).await;
                    })
                    .await
            });
            runtime.shutdown_timeout(std::time::Duration::from_secs(5));
            // the router held the last engine handles; the loop has exited
            let _ = engine_thread.join();
            served.map_err(ServerError::from)
        })?;
    log::info!("listening on {addr}");
    Ok(RunningServer {
        addr,
        stop,
        thread: Some(thread),
    })
}

/// Serve until Ctrl-C.
pub fn run(config: ServerConfig) -> Result<(), ServerError> {
    let server = start(config)?;
    eprintln!("smstrack listening on {}", server.base_url());
    let (tx, rx) = std::sync::mpsc::channel();
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    std::thread::spawn(move || {
        runtime.block_on(async {
            let _ = tokio::signal::ctrl_c().await;
        });
        let _ = tx.send(());
    });
    let _ = rx.recv();
    server.shutdown()
}
