//! Ensemble confidence, calibration and confidence-based routing between
//! human and AI answers, with the analyses that go with them.
//!
//! The modules follow the data: [`corpus`] loads and partitions records,
//! [`aggregate`] turns response sets into judgments, [`calibrate`] fits score
//! maps, [`route`] learns and applies routing policies, [`analyze`] holds the
//! complementarity statistics and [`pipeline`] runs them end to end.

pub mod aggregate;
pub mod analyze;
pub mod calibrate;
pub mod config;
pub mod corpus;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod route;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use pipeline::run_pipeline;
