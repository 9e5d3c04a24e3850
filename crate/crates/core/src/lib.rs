//! End-to-end trainable sparse feature pipeline for two-view relative pose.
//!
//! The crate wires a small convolutional detector/descriptor network into a
//! complete pose estimation pipeline: keypoints are sampled from the predicted
//! heat map, matches are sampled from a descriptor-distance distribution, the
//! essential matrix is fit robustly with a 5-point solver inside RANSAC, and
//! the resulting pose error drives a score-function gradient back into the
//! network. Synthetic two-view scenes with exact ground truth make every stage
//! verifiable against independent oracles.
//!
//! Module map:
//! - [`geometry`]: essential matrix algebra, 5-point minimal solver,
//!   decomposition with cheirality, epipolar residuals, angular pose error.
//! - [`robust`]: RANSAC over matches and the clamped task loss.
//! - [`model`]: the detector/descriptor network with hand-written
//!   reverse-mode gradients and an Adam optimizer.
//! - [`sampling`]: probabilistic keypoint/match selection plus deterministic
//!   test-time extraction.
//! - [`trainer`]: score-function gradient estimation, the training loop and
//!   the supervised warm-up.
//! - [`synthdata`]: synthetic two-view scene generator and dataset files.
//! - [`eval`]: pose-error AUC, matching accuracy and match statistics.
//!
//! All randomness flows through explicitly seeded ChaCha8 generators, so every
//! result in the crate is reproducible bit-for-bit from its configuration.

pub mod eval;
pub mod geometry;
pub mod model;
pub mod robust;
pub mod sampling;
pub mod synthdata;
pub mod trainer;
pub(crate) mod util;

pub use geometry::{EssentialMatrix, Intrinsics, NormalizedPoint2, Pose};
pub use model::{DescriptorField, HeatMap, ModelConfig, ModelParams};
pub use robust::{RansacConfig, TaskResult};
pub use sampling::{ExtractConfig, KeyPointSet, MatchSet};
pub use synthdata::{PairSample, SceneConfig};
pub use trainer::{PretrainConfig, TrainConfig};
