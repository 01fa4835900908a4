//! Experiment runner library behind the `vfalign` binary: config
//! schemas, experiment drivers and output artifact writers.

pub mod config;
pub mod experiments;
pub mod report;
