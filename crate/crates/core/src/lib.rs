//! Two-tier cooperative perception fusion.
//!
//! Sensor platforms (vehicles and infrastructure sensors) fuse their own
//! detections locally, with per-observation covariances predicted from the
//! detected distance. A road side unit fuses the platforms' local tracks in
//! the world frame after inflating them by a localization covariance
//! predicted from each platform's speed.

pub mod association;
pub mod calibration;
pub mod error_models;
pub mod evaluation;
pub mod geometry;
pub mod global_fusion;
pub mod local_fusion;
pub mod simulator;
pub mod tracking;
