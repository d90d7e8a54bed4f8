//! Probabilistic LiDAR-camera fusion for localizing detected objects under
//! camera mapping errors, with a synthetic scene generator and evaluation
//! tools.

// Negated comparisons are how validators reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aoi;
pub mod calib;
pub mod cluster;
pub mod config;
pub mod ground;
pub mod io;
pub mod localize;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod shape;
pub mod smoother;
pub mod stats;
pub mod synth;
