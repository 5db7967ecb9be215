use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // The io error is part of the message rather than a source, so chained
    // reports do not print it twice.
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    /// A file did not conform to its declared format.
    #[error("{file}: field `{field}`: {message}")]
    Format {
        file: String,
        field: String,
        message: String,
    },

    #[error("shape mismatch: {left_name} is {left:?} but {right_name} is {right:?}")]
    ShapeMismatch {
        left_name: String,
        left: Vec<usize>,
        right_name: String,
        right: Vec<usize>,
    },

    #[error("unknown skeleton kind `{0}`")]
    UnknownSkeletonKind(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No principal bone has both endpoints present.
    #[error("scale unavailable: no principal bone has both endpoints present")]
    ScaleUnavailable,

    /// A foreground pixel carries no admissible partition.
    #[error("empty label set at foreground pixel ({x}, {y})")]
    EmptyLabelSet { x: usize, y: usize },

    #[error(
        "mesh edge graph is disconnected: {components} components, vertex {unreachable_vertex} \
         is unreachable from vertex 0 (its component has {component_size} vertices)"
    )]
    DisconnectedMesh {
        components: usize,
        unreachable_vertex: usize,
        component_size: usize,
    },

    #[error("vertex {0} is not a source of this geodesic oracle")]
    NotASource(u32),

    #[error("no evaluable points")]
    NoEvaluablePoints,

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn format(file: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// Stable machine-readable category, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::UnknownSkeletonKind(_) => "unknown_skeleton_kind",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidInput(_) => "invalid_input",
            Error::ScaleUnavailable => "scale_unavailable",
            Error::EmptyLabelSet { .. } => "empty_label_set",
            Error::DisconnectedMesh { .. } => "disconnected_mesh",
            Error::NotASource(_) => "not_a_source",
            Error::NoEvaluablePoints => "no_evaluable_points",
            Error::Png(_) => "png",
        }
    }
}
