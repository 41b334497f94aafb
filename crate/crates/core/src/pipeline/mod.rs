//! File-based pipeline stages.

mod config;
pub mod fixtures;

pub mod stages;
pub use config::*;
pub use stages::{Pipeline, Stage};
