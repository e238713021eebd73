//! Convolutional coalesced Tsetlin Machine.
//!
//! A single bank of convolutional clauses is shared across all classes, each
//! clause carrying one signed integer weight per class. Clauses are matched
//! against every `W x W` patch of a binarized image together with
//! thermometer-encoded patch coordinates and the per-patch matches are
//! OR-aggregated into one clause output.
//!
//! Besides training and inference the crate produces two kinds of pixel-level
//! explanations:
//!
//! * [`interpreter::local_interpretation`] deconvolves the positive-weight
//!   clauses that fire on one input back onto the image grid.
//! * [`interpreter::global_class_representation`] aggregates every
//!   positive-weight clause of a class over its feasible positions, weighted
//!   by how often the clause fired at each position during training.
//!
//! Per-clause work (matching, feedback) runs on rayon when the `parallel`
//! feature is enabled (the default) and sequentially otherwise. Every clause
//! draws from its own random stream, so results do not depend on the number
//! of worker threads.

pub mod clause_bank;
pub mod codec;
pub mod config;
pub mod error;
pub mod interpreter;
pub mod io;
pub mod metrics;
mod par;
pub mod trainer;

pub use clause_bank::{extract_patches, ClauseBank, PatchLiteralVector, Patches};
pub use codec::{BinarizedSample, Binarizer, RawImage, ThermometerCodec};
pub use config::{LiteralLayout, ModelConfig, Task};
pub use error::{Error, Result};
pub use interpreter::{Interpretation, NormalizedInterpretation};
pub use io::{Dataset, Labels};
pub use metrics::EvalReport;
pub use trainer::TrainRng;
