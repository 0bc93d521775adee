//! Evaluation toolkit for saliency maps on multi-modal images.
//!
//! The crate computes Shapley-value Modality Importance (MI) for a
//! black-box classifier, scores saliency maps with the MI-weighted
//! Modality-Specific Feature Importance (MSFI) metric, and ships the
//! pieces needed to run the whole pipeline end to end: an MMV file
//! format, a reference shape classifier, six perturbation attribution
//! methods, a synthetic tumor dataset generator and report rendering.

pub mod ablate;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod saliency;
pub mod synthgen;
pub mod tensorio;
pub mod util;

pub use error::{Error, Result};
