//! Command-line front end, sweeps and verification suites for resil-core.

pub mod acceptance;
pub mod bench;
pub mod cli;
pub mod normarg;
pub mod seeds;
