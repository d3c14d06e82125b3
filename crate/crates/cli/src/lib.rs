//! Command-line surface and HTTP reward service for the conversational
//! query reformulation pipeline in `convsearch-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;
