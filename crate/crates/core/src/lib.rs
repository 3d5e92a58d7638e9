//! Segmenting intervention-driven metric shifts between paired snapshots of a
//! tabular dataset, separating them from data-quality noise.

pub mod bench;
pub mod dsl;
pub mod config;
pub mod error;
pub mod eval;
pub mod gbt;
pub mod noise;
pub mod pairing;
pub mod pareto;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod table;

pub use error::{Error, Result};
