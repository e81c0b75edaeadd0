//! On-disk formats: images, fields, checkpoints, label stores, configs, reports, and plots.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod nifti;
pub mod plot;
pub mod raw;
pub mod report;
pub mod store;
