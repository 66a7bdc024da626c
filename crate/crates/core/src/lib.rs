pub mod clock;
pub mod codec;
pub mod energy;
pub mod engine;
pub mod events;
pub mod gateway;
pub mod ids;
pub mod pipeline;
pub mod registry;
pub mod scheduler;
pub mod store;
