//! Feature-space out-of-distribution detection.
//!
//! In-distribution embeddings are partitioned with k-means, each cluster is
//! modelled by a Gaussian, and a test embedding is scored by its smallest
//! Mahalanobis distance to any cluster. A few labelled outliers can be folded
//! in through a shrunk covariance estimate of the outlier class. The crate
//! also carries the contrastive losses used to learn such embeddings, the
//! usual detection metrics, and the file formats the `ssd` CLI reads and writes.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

pub mod clustering;
pub mod detector;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod numerics;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type KMeansModel64 = clustering::KMeansModel<f64>;
pub type DetectorModel64 = detector::DetectorModel<f64>;
pub type DetectorModel32 = detector::DetectorModel<f32>;
pub type FewShotModel64 = detector::FewShotModel<f64>;
pub type ContrastiveBatch64 = losses::ContrastiveBatch<f64>;
pub type ToyEncoder64 = losses::ToyEncoder<f64>;
