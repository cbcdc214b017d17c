//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid label multiset: {0}")]
    InvalidMultiset(String),

    #[error("assignment enumeration would produce {count} tuples, above the cap of {cap}")]
    CapExceeded { count: String, cap: u64 },

    #[error("class {class} is not present in the multiset")]
    AbsentLabel { class: usize },

    #[error(
        "exact path infeasible: {states} remaining-count states exceed the cap of {cap}, \
         use rc-approx"
    )]
    StateSpaceExceeded { states: u128, cap: u128 },

    #[error("partition function vanished: every label assignment has zero weight")]
    ZeroPartition,

    #[error("bag has no candidate label sets (empty support)")]
    EmptyCandidates,

    #[error("model probability mass on the bag support is {mass:.3e}, below 1e-30")]
    DegenerateSupport { mass: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite gradient in layer {layer}, step aborted")]
    NonFiniteGradient { layer: usize },

    #[error(
        "{path}: bad magic at offset {offset}: found {found:#010x}, expected {expected:#010x}"
    )]
    BadMagic {
        path: PathBuf,
        offset: u64,
        found: u32,
        expected: u32,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: truncated at offset {offset}: needed {needed} more bytes")]
    TruncatedFile {
        path: PathBuf,
        offset: u64,
        needed: u64,
    },

    #[error("learning-rate search failed for every grid point:\n{causes}")]
    SearchFailed { causes: String },

    #[error("exhaustive enumeration too large: {work:.3e} terms exceed the cap of {cap:.3e}")]
    EnumerationTooLarge { work: f64, cap: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
