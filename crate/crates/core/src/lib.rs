//! Geometric half of an RGB-D 6-DoF object pose-estimation pipeline.
//!
//! The learned predictor of the original system is replaced by a pluggable
//! vote source: a calibrated synthetic noise oracle ([`votes::synth_votes`])
//! or precomputed vote CSV files. Everything downstream of the votes is
//! implemented here: keypoint selection ([`keypoints`]), mean-shift vote
//! aggregation ([`aggregation`]), robust 3D-3D registration and ICP
//! refinement ([`registration`]), ADD/ADD-S evaluation ([`evaluation`]), a
//! PBVS simulator ([`servoing`]), and a seeded Monte-Carlo benchmark harness
//! ([`benchmark`]).
//!
//! Units are meters and radians internally; file formats that speak mm or
//! degrees say so in their headers and are converted at the boundary.

pub mod aggregation;
pub mod benchmark;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod keypoints;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod registration;
pub mod servoing;
pub mod spatial;
pub mod votes;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pose, PoseDelta, Vec3, Vec6};
