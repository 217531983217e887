//! Doubly supervised transfer learning between two imaging modalities.
//!
//! A small, fully paired *source* modality acts as privileged information
//! for a larger *target* modality. Two independent channels are trained
//! jointly: an SVM+ coupling on the paired records lets the source channel
//! model the slack of the target decision function, while a hinge loss plus
//! a maximum mean discrepancy term transfers knowledge to the target-only
//! records. Only the target channel is needed at prediction time.
//!
//! Modules:
//! - [`tensor`] / [`autodiff`]: dense `f64` tensors and a tape-style
//!   reverse-mode graph.
//! - [`network`]: per-domain channels and checkpoints.
//! - [`losses`]: hinge, SVM+ surrogate, MMD, CORAL and the combined objective.
//! - [`data`]: synthetic bimodal data, CSV persistence, fold plans.
//! - [`optim`] / [`train`]: SGD/Adam and the training loops for every algorithm.
//! - [`eval`]: prediction, metrics, ROC/AUC and cross-validation.
//! - [`experiment`]: the comparison runner behind the `ddstn` binary.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
