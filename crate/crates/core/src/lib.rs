//! Classic and GAN-based synthetic augmentation for small labeled grayscale
//! lesion-ROI datasets, with a patient-level cross-validated experiment
//! harness and a procedural phantom dataset for desk-scale runs.

pub mod classic_aug;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod data_model;
pub mod dcgan;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod phantom;
pub mod seed;

pub use error::{Error, Result};
