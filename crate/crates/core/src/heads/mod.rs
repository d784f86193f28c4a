//! Feature alignment heads.

pub mod fc;
pub mod lk;

pub use fc::{FcHead, FcVariant};
pub use lk::{lk_precompute, FeatureMap, LkModel, LkState};
