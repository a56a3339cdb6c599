//! Terrain traversability learned from walked trajectories.
//!
//! Future poses of a walking rig are projected into each camera frame to
//! mark the ground that was actually stepped on. Superpixels under the path
//! pool dense per-pixel embeddings into one vector per segment; an
//! encoder-decoder network trained only on those vectors then scores any
//! terrain by its reconstruction error, which is normalized into a cost map
//! and lifted into a 3D cost cloud for a local planner.

// `!(x > 0.0)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod cloud;
pub mod config;
pub mod costmap;
pub mod defaults;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod raster;
pub mod superpixel;
pub mod synth;
