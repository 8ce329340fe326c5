//! Command-line surface and review service for the bottomflag pipeline.

pub mod commands;
pub mod corrections;
pub mod service;
