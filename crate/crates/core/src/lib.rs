//! Multi-class learning from label proportions.
//!
//! Training data arrives as bags of `K` instances whose only supervision is
//! the multiset of labels inside each bag. This crate implements a family of
//! per-instance weighted losses over the joint label-assignment distribution
//! (an exact dynamic-programming path and a tempered leave-one-out
//! approximation), the bag-level and supervised baselines they are compared
//! against, a from-scratch linear/MLP + Adam training stack, dataset
//! ingestion for the MNIST-family IDX format, and a set of independent
//! brute-force oracles that verify the underlying identities numerically.
//!
//! The `llp` binary in the companion CLI crate drives experiments; see the
//! repository README for the protocol.

pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod marginals;
pub mod model;
pub mod multiset;
pub mod optim;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use experiment::{
    emit_report, emit_svg_curves, evaluate_accuracy, lr_search, parse_report, run_experiment,
    ExperimentConfig, Method, MetricsRecord, ModelKind, RunOutput,
};
pub use multiset::{multiset_space_size, LabelMultiset};
