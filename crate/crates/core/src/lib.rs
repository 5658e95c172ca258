//! Temporal-channel modeling (TCM) attention for synthetic-speech detection.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors with reverse-mode autodiff.
//! * [`model`]: head-token generation, TCM attention, Conformer and
//!   Transformer blocks, and the CLS-token classifier.
//! * [`data`]: synthetic corpus generator, feature/protocol files, batching.
//! * [`train`]: weighted cross-entropy, Adam, early stopping, checkpoints.
//! * [`metrics`]: EER, min t-DCF, DET points, score files, evaluation.
//! * [`experiment`]: train-then-evaluate runs shared by the CLI and tests.

mod binio;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{BlockKind, Classifier, ModelConfig, TcmToggles};
pub use tensor::{Tape, Tensor, Var};
