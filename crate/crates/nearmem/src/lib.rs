//! File formats, experiment runners and the command line front end for the
//! `nearmem-core` simulator.

pub mod config;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::ConfigFile;
pub use nearmem_core as core;
