//! Command-line front end for the fedcf library.
//!
//! Exposed as a library so integration tests can load the shipped
//! configuration through the same path the binary uses.

pub mod commands;
pub mod config;
