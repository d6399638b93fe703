//! Student/teacher domain adaptation for diachronic text classification.
//!
//! The crate bundles a small reverse-mode autodiff engine, corpus tooling
//! with a synthetic drifting-corpus generator, a causal dilated CNN
//! classifier, fixed and adaptive teacher ensembling, and evaluation
//! utilities.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod ensembling;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;

pub use error::{Error, Result};
