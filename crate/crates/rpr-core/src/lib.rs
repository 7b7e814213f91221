//! Rotation-invariant point-cloud descriptors for large scale place recognition.
//!
//! The pipeline: a cloud is downsampled to a seed set (farthest-point sampling),
//! grouped by k-nearest neighbors, and per-group rotation-invariant features
//! (radial spherical signals, individual-level and group-level distance/angle
//! features) are extracted. A stack of attentive rotation-invariant convolutions
//! maps those features to per-seed descriptors, which generalized-mean pooling
//! aggregates into a global vector used for retrieval.
//!
//! Everything downstream of the geometry depends on the cloud only through the
//! invariant features, so descriptors are unchanged under any rigid rotation of
//! the input.

pub mod ariconv;
pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod network;
pub mod retrieval;
pub mod rif;
pub mod synth;
pub mod training;

pub use error::RprError;
pub use geometry::{GroupIndex, PointCloud, RotationMatrix};
pub use network::{Descriptor, RprNet, RprNetConfig};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, RprError>;
