//! Texture-based mammogram categorization: GLCM statistics over three ROI
//! selection strategies, Fisherfaces reduction, SOM prototype features and
//! cross-validated evaluation.

pub mod dataset;
pub mod arff;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod fingerprint;
pub mod fisherfaces;
pub mod glcm;
pub mod kmeans;
pub mod par;
pub mod roi;
pub mod som;
pub mod synth;
pub mod textmodel;

pub use error::{Error, Result};
