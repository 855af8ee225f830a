//! A from-scratch convolutional network engine for human activity recognition
//! on vertically stacked inertial-sensor windows.
//!
//! The network applies 1D convolutions to every sensor channel independently and
//! fuses channels only in a late 2D convolution (filter height 3, vertical
//! stride 3), followed by global average pooling and a softmax classifier.
//!
//! Modules, bottom-up:
//!
//! * [`tensor`]: dense rank-4 arrays in `(n, c, h, w)` order.
//! * [`layers`]: forward and backward passes for every layer kind.
//! * [`model`]: the assembled network, its configuration and initialization.
//! * [`optim`]: the Adadelta optimizer.
//! * [`data`]: corpus loaders, windowing, normalization and the dataset cache.
//! * [`metrics`]: confusion matrix and classification metrics.
//! * [`train`]: training loop, checkpoints, evaluation, ensembles, gradient checks.

pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::Mode;
pub use model::{Head, ModelConfig, PerceptionNet};
pub use tensor::{Axis, Dims, Precision, Reduction, Scalar, Tensor4};
