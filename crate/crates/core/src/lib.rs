//! Multi-modal entity alignment under uncertainly missing visual features:
//! data handling, benchmark split generation, encoders, fusion objectives,
//! modality imagination, staged training and evaluation.

pub mod cmmi;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
mod init;
pub mod kgdata;
pub mod model;
pub mod trainer;
pub mod umvm;

pub use error::{Error, Result};
