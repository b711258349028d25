//! Crossarm inspection data pipeline.
//!
//! - [`coco`]: COCO annotation sets (parse, write, normalize, validate)
//! - [`metrics`]: IoU, matching, AP/mAP, F1 sweeps, health confusion, lift
//! - [`synthgen`]: seeded procedural scenes with pixel-exact labels
//! - [`detector`]: seeded oracle detector and remote model client
//! - [`experiments`]: training manifests, dataset QC, experiment runs and baseline comparison
//! - [`tracker`]: event-sourced image lifecycle over an append-only log
//! - [`api`]: HTTP request and response bodies
//! - [`raster`]: even-odd scanline rasterization shared by metrics and rendering

pub mod api;
pub mod coco;
pub mod dataset;
pub mod detector;
pub mod experiments;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod synthgen;
pub mod tracker;
