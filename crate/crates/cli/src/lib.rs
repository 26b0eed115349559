//! Pipeline configuration and the live-match service behind the `qb` binary.

pub mod config;
pub mod server;
