//! High-frequency futures volatility toolkit: tick ingestion, long-memory
//! diagnostics and asymmetric power ARCH estimation.

pub mod aparch;
pub mod calendar;
pub mod error;
pub mod estimator;
pub mod ingest;
mod linalg;
pub mod longmem;
mod numdiff;
pub mod series;

pub use error::{Error, Result};
