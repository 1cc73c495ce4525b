//! Configuration parsing and command implementations behind the
//! `eigenmeasure` binary.

pub mod commands;
pub mod config;
