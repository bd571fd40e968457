//! Query-focused video summarization pipeline.
//!
//! The crate is organised as a stack of small, testable layers:
//!
//! * [`tensor`] is a minimal reverse-mode automatic differentiation engine
//!   over dense f64 tensors, plus a deterministic RNG and a binary
//!   checkpoint format.
//! * [`layers`] wraps raw tensor ops into parameterised building blocks
//!   (linear, conv, batch norm, dropout) with deterministic initialisation.
//! * [`attention`] implements the three attention stages used by the model:
//!   local self-attention within a segment, query-guided segment attention,
//!   and global attention across segments.
//! * [`backbone`] is the temporal convolution / deconvolution network that
//!   compresses a padded shot sequence, runs attention at the reduced
//!   resolution, and restores the original temporal length.
//! * [`scoring`] projects visual and query features into a shared space,
//!   fuses them, and produces per-shot relevance scores with a binary
//!   cross-entropy training loss and top fraction summary selection.
//! * [`segmentation`] is kernel-based temporal segmentation (change point
//!   detection) used to split a video into coherent segments.
//! * [`evalmetric`] scores a machine summary against a ground-truth summary
//!   through a maximum-weight bipartite matching over per-shot concept
//!   overlap.
//! * [`dataset`] generates a fully synthetic, deterministic benchmark with
//!   known ground truth, and defines the on-disk bundle format.
//! * [`model`] composes the backbone and scoring head into one trainable
//!   model with checkpoint save/load.
//! * [`trainer`] runs leave-one-video-out training with the Adam optimiser
//!   and produces evaluation reports.
//! * [`config`] is the human-readable `key = value` configuration format.
//! * [`report`] renders per-shot score/selection tables, comparison
//!   timelines, and small SVG charts.

pub mod attention;
pub mod backbone;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evalmetric;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod report;
pub mod scoring;
pub mod segmentation;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
