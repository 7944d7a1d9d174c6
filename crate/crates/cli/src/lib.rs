//! Configuration, execution and artifact output for the `rsde` binary.

pub mod config;
pub mod output;
pub mod run;
