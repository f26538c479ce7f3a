//! Command-line front end: config schema and the stage pipeline behind the
//! `attnmem` binary.

pub mod config;
pub mod pipeline;
