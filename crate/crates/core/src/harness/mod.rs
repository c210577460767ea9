//! Experiment harness: configuration, synthetic data, studies, records and
//! the command-line front end.

pub mod cli;
pub mod config;
pub mod data;
pub mod records;
pub mod study;
