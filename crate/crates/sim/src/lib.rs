//! Simulation harness: scenario files, the camera perception pipeline,
//! cloud controller, on-robot executor, deterministic run loop, metrics,
//! event logs, and SVG plotting.

pub mod cloud;
pub mod gen;
pub mod logs;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod robot;
pub mod runloop;
pub mod scenario;
pub mod seeds;
