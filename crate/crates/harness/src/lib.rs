//! Configuration, orchestration and persistence for cellflow experiments.

pub mod config;
pub mod error;
pub mod experiments;
pub mod figures;
pub mod output;
pub mod selftest;
