//! Discrete-event simulator for long-distance Wi-Fi links comparing a centrally
//! scheduled token-passing MAC against contention-based DCF.

pub mod dcf;
pub mod config;
pub mod error;
pub mod ids;
pub mod mac;
pub mod metrics;
pub mod network;
pub mod phy;
pub mod report;
pub mod rng;
pub mod sim;
pub mod time;
pub mod token;
pub mod traffic;

pub use error::SimError;
pub use ids::{FlowId, NodeId};
pub use time::{SimDuration, SimTime};
