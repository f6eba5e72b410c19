//! Differentiable learning core for unsupervised monocular depth and
//! ego-motion estimation with explicit per-object 3D motion, an object-size
//! constraint loss, and test-time online refinement.
//!
//! The crate provides:
//! - pinhole geometry and SE3 pose algebra ([`geometry`]);
//! - a reverse-mode tape engine over the pipeline's op set ([`autodiff`]);
//! - the differentiable inverse-warping operator ([`warp`]);
//! - photometric, SSIM, smoothness, and object-size losses ([`losses`]);
//! - the object-motion warping sequence ([`motion`]);
//! - direct-parameterization predictors ([`predictors`]);
//! - gradient-descent training and online refinement ([`trainer`]);
//! - a synthetic-scene oracle generator ([`synth`]);
//! - depth and odometry evaluation metrics ([`metrics`]).

pub mod autodiff;
pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod predictors;
pub mod synth;
pub mod trainer;
pub mod viz;
pub mod warp;

pub use error::{Error, Result};
