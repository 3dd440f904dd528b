//! Command-line front end and HTTP session service over `icube-core`.

pub mod commands;
pub mod service;
pub mod setup;
