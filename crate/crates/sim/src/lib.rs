//! Virtual locator fleet for exercising smstrack without hardware.
//!
//! Every random draw comes from a ChaCha8 stream derived from the scenario
//! seed, so a scenario replays identically.

pub mod error_model;
pub mod fleet;
pub mod geo;
pub mod latency;
pub mod locator;
pub mod route;
pub mod scenario;
pub mod simulation;

pub use error_model::RadialErrorModel;
pub use fleet::{Fleet, FleetEvent, LoopbackTransport};
pub use latency::LatencyModel;
pub use locator::{LocateReply, LocatorSpec, VirtualLocator};
pub use route::{Route, Waypoint};
pub use scenario::{ConfigError, ScenarioConfig};
pub use simulation::{run_scenario, SimError, Simulation, StoreMode, Summary};
