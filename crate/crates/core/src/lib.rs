//! Correspondence-free rigid point cloud registration.
//!
//! A PointNet-style encoder maps source and template clouds to global
//! features; an alignment head turns the pair of features into a rigid pose,
//! either with a learned fully connected regressor or with an
//! inverse-compositional Lucas-Kanade solve. An iterative driver composes
//! per-iteration estimates, and a classical ICP serves as the baseline.

pub mod autodiff;
pub mod cloud;
pub mod config;
pub mod driver;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod heads;
pub mod icp;
pub mod io;
pub mod kdtree;
pub mod losses;
pub mod model;
pub mod se3;
pub mod selfcheck;
pub mod synth;
pub mod train;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use se3::{Rotation, Transform};
