//! Command implementations behind the `noduleseg` binary.
//!
//! Each subcommand is an ordinary function here so integration tests can call
//! it in-process. Every command writes into a single output directory: the
//! effective configuration (`config.json`), the artifacts it produced, and a
//! run manifest (`manifest.json`) hashing each artifact.

pub mod commands;
pub mod config;
pub mod manifest;
