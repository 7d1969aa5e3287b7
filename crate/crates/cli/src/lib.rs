//! Data preparation, training and evaluation driver behind the `umaea`
//! binary.

pub mod app;
pub mod commands;
pub mod config;
pub mod dataset;
