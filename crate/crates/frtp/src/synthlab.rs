//! Deterministic synthetic scenario generation and brute-force oracles.

pub mod generate;
pub mod oracles;

pub use generate::{generate, CongestionEvent, Generated, Manifest, Scenario};
