//! Segmented-waveguide pinching-antenna ISAC: channel models, rate metrics,
//! alternating-optimization beamforming, a structured graph-network inference
//! path, baselines and a Monte-Carlo harness.

pub mod ao;
pub mod baselines;
pub mod bench;
pub mod channel;
pub mod check;
pub mod error;
pub mod gnn;
pub mod metrics;
pub mod perm;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result, WeightsError};
pub use scalar::Real;

/// Double-precision aliases used by the CLI and the benchmarks.
pub type Config = scenario::ScenarioConfig<f64>;
pub type Layout = scenario::PinchingLayout<f64>;
pub type Placement = scenario::Placement<f64>;
pub type Channels = channel::ChannelSet<f64>;
