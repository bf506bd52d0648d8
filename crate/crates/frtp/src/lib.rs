//! Federated route-search traffic prediction.
//!
//! The pipeline structures raw route-search records into per-segment demand
//! signals, fuses them with traffic-counter and calendar features across
//! differing time granularities, and trains a convolution → max-pool(R) →
//! LSTM forecaster for day-ahead to week-ahead speed prediction.

pub mod error;
pub mod features;
pub mod federate;
pub mod harness;
pub mod ingestion;
pub mod model;
pub mod network;
pub mod rng;
pub mod synthlab;
pub mod time;

pub use error::FrtpError;
