//! Self-paced, self-consistent co-training for semi-supervised image
//! segmentation.
//!
//! `K` small segmentation networks are trained jointly: a supervised
//! cross-entropy on the few labeled images, a self-paced generalized
//! Jensen-Shannon agreement loss on unlabeled pixels (with an entropy
//! regularizer), and a mean-teacher consistency loss under random
//! rotations. Everything runs on a small reverse-mode tape in `f64`.
//!
//! Module map:
//!
//! - [`tensor`]: tensors and the gradient tape
//! - [`losses`]: loss terms and closed-form self-paced weights
//! - [`schedules`]: pace, entropy weight, learning rate, EMA
//! - [`model`]: network, view ensemble, rotations, soft voting
//! - [`data`]: synthetic dataset, sampling, `.spct` files
//! - [`engine`]: the training loop, evaluation, ablation grid
//! - [`metrics`]: Dice and Hausdorff
//! - [`verify`]: numerical certification checks

pub mod data;
pub mod engine;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod schedules;
pub mod tensor;
pub mod verify;

pub use losses::{GroundTruthMask, ProbMap};
pub use model::{SegNetTiny, Transform, ViewEnsemble};
pub use tensor::{Tape, Tensor, Var};
