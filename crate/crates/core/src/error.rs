use alloc::string::String;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("part vector of item {item}, part {part} has norm {norm} (expected unit length)")]
    NotUnitNorm { item: usize, part: usize, norm: f64 },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("cluster ids must be dense 0..n_clusters-1; id {id} breaks the sequence")]
    SparseClusterIds { id: usize },
    #[error("duplicate item index {item} in label table")]
    DuplicateItem { item: usize },
    #[error("item index {item} out of range for {n_items} items")]
    ItemOutOfRange { item: usize, n_items: usize },
    #[error("partitions cover different item counts: {left} vs {right}")]
    PartitionMismatch { left: usize, right: usize },
    #[error("batch must contain at least 2 distinct identities, found {found}")]
    TooFewIdentities { found: usize },
    #[error("identity {label} has a single instance in the batch; at least 2 are required")]
    SingletonIdentity { label: u32 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("pre-normalization embedding of item {item}, part {part} is degenerate (norm {norm})")]
    DegenerateEmbedding { item: usize, part: usize, norm: f64 },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("labeled subset is empty; nothing to train on")]
    EmptyLabeledSet,
}

pub type Result<T> = core::result::Result<T, Error>;
