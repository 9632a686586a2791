//! Self-supervised point features from Z-ordered point sequences.
//!
//! The pipeline: quantize a cloud and order it along a Morton curve
//! ([`morton`]), find each point's local support ([`neighborhood`]), sample
//! ordered k-point sequences ending at every point ([`sequence`]), train a
//! recurrent regressor to predict the final displacement ([`model`],
//! [`train`]), and max-pool its final hidden states into per-point
//! features ([`features`]) for a light pointwise classifier
//! ([`downstream`]).

pub mod cloud;
pub mod datagen;
pub mod downstream;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod features;
pub mod io;
pub mod model;
pub mod morton;
pub mod neighborhood;
pub mod nn;
pub mod rng;
pub mod sequence;
pub mod train;

pub use cloud::{Point3, PointCloud};
pub use error::{Error, Result};
pub use exec::Execution;
