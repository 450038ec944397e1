//! Region feature extraction for two-stage object detection.
//!
//! Every extractor here computes part features as weighted sums of image
//! features over a support region. [`pooling`] holds the hand-crafted
//! variants (regular, aligned, deformable, position-sensitive, center point,
//! masked), [`attention`] the learnable extractor whose weights come from box
//! and position embeddings plus an appearance term, and [`sampling`] the sparse
//! support plans it runs on.

pub mod analysis;
pub mod attention;
pub mod checkpoint;
pub mod cost;
pub mod error;
pub mod grad;
pub mod io;
pub mod linalg;
pub mod par;
pub mod pooling;
pub mod sampling;
pub mod tensor;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{FeatureMap, InstanceMask, PartFeatureMatrix, Position, Roi, WeightField};
