//! Segmentation from several experts' annotations of the same images.
//!
//! A single residual encoder feeds one decoder per expert; decoder logits
//! are summed into one prediction that is trained against every expert's
//! mask with a weighted hybrid loss.

pub mod cli;
pub mod config;
pub mod data;
pub mod domain;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
