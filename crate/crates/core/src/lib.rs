//! Configurable CTR model training with offline/online-consistent features,
//! incremental model deltas, and a low-latency scoring service.

pub mod config;
pub mod feature_gen;
pub mod model;
pub mod delta_stream;
pub mod trainer;
pub mod serving;
pub mod hpo;
pub mod feature_select;
pub mod sample_stream;
pub mod synthetic;
