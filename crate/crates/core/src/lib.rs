//! Intraday gas-fee analytics: ingestion of transaction exports, congestion
//! proxies, hour-of-day regressions with HC3 errors, firm peak-shaving
//! scorecards, a four-regime scheduling recommender, and an EIP-1559
//! fee-market simulator.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fixed;
pub mod ingest;
pub mod congestion;
pub mod econometrics;
pub mod feesim;
pub mod metrics;
pub mod report;
pub mod scheduler;
pub mod seed;

pub use error::{Error, Result};
