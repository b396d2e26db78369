use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph has {n} nodes but the padded size is {n_max}")]
    OversizeGraph { n: usize, n_max: usize },
    #[error("node degree {degree} exceeds histogram bound {max_degree}")]
    DegreeOverflow { degree: usize, max_degree: usize },

    #[error("parse error in {path} at record {record}: {message}")]
    Parse {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("dataset {0} contains no graphs")]
    EmptyDataset(String),
    #[error("could not sample a graph within size bounds after {attempts} attempts")]
    RejectionExhausted { attempts: usize },
    #[error("need at least {needed} graphs, got {got}")]
    TooFewGraphs { needed: usize, got: usize },

    #[error("topic vector is not one-hot")]
    NotOneHot,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("assembly requires at least one substructure")]
    EmptySequence,

    #[error("standard deviation must be strictly positive")]
    NonPositiveSigma,
    #[error("vector is not on the probability simplex: {0}")]
    SimplexViolation(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("topic {topic} out of range for K = {k}")]
    InvalidTopic { topic: usize, k: usize },
    #[error("no checkpoint loaded")]
    NoCheckpoint,
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("metric requires non-empty sample sets")]
    EmptySet,
    #[error("k = {k} requires more than {k} samples per set, got {got}")]
    TooFewSamples { k: usize, got: usize },
    #[error("samples are constant with different values; effect size undefined")]
    DegenerateVariance,
    #[error("classifier needs at least two classes")]
    SingleClass,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
