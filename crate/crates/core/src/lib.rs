//! Desk-scale laboratory for multimodal knowledge distillation with a
//! modality-level Gram-matrix relation loss.
//!
//! The crate wires together:
//! - [`tensor`]: a small reverse-mode autodiff engine over dense f64 tensors,
//!   plus a central finite-difference gradient oracle;
//! - [`model`]: feed-forward multimodal classifiers with text-only,
//!   image-only, and joint input modes;
//! - [`loss`]: tri-modality cross entropy, tempered KD, and the Gram-matrix
//!   relation loss between teacher and student;
//! - [`data`]: a deterministic synthetic multimodal dataset whose labels
//!   require joint text-image reasoning, with CSV I/O;
//! - [`train`]: teacher training, student distillation, the per-epoch
//!   relation trace, and the KD vs KD+MR comparison harness;
//! - [`heatmap`]: P5 graymap rendering of 3×3 relation matrices.

pub mod check;
pub mod config;
pub mod data;
pub mod error;
pub mod heatmap;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use config::{DistillConfig, OptimizerKind, RelationMode};
pub use data::{Dataset, ModalSample};
pub use error::{Error, Result};
pub use loss::GramMatrix;
pub use model::{ActivationSource, ModalNet, ModalityActivations, ModalityMode};
pub use train::{RelationTrace, TrainReport};
