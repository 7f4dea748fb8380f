//! Structure-conditioned sequence likelihood model with reference-free
//! preference fine-tuning, evaluation metrics, and two-stage Pareto screening
//! of generated variants.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: dense `f64` tensors with reverse-mode gradients.
//! - [`ifmodel`]: geometry featurizer, structure encoder, autoregressive
//!   decoder, mutable-pool variant generation.
//! - [`preference`]: NLL, DPO and SimPO objectives.
//! - [`trainer`]: AdamW with freeze masks, pair sampling, checkpoints.
//! - [`evalkit`]: rank correlation, precision@k, ROC/PR, thermodynamics.
//! - [`paratope`]: per-residue binding-site head on frozen embeddings.
//! - [`screening`]: quantile prefilter, Pareto panel, scorer registry.
//! - [`dataio`]: assay tables, splits, synthetic ground-truth datasets.

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod ifmodel;
pub mod paratope;
pub mod preference;
pub mod screening;
pub mod trainer;

pub use error::{Error, Result};
