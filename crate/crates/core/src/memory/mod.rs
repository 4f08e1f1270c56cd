//! Timing-visible data cache, probe primitives and the execution-port model.

pub mod cache;
pub mod ports;
pub mod probe;

pub use cache::{AccessKind, Cache};
pub use ports::{mean_contention, port_for, PortModel};
pub use probe::{probe, probe_addresses, ProbeResult};
