//! Shell around `redip_core`: image files, run configuration, JSON reports
//! and the subcommands of the `redip` binary.

pub mod commands;
pub mod config;
pub mod failure;
pub mod imgio;
pub mod report;
