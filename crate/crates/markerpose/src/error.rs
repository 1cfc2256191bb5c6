//! Crate-wide error type.
//!
//! Errors are grouped into three exit classes for the CLI: usage errors
//! (handled by argument parsing), data/validation errors, and numerical
//! failures. [`Error::exit_class`] maps a variant to its process exit code.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between tensors or images; names the offending axis.
    #[error("dimension mismatch on {axis}: {detail}")]
    Dimension { axis: &'static str, detail: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid value: {0}")]
    Value(String),

    /// Optimizer or training state is inconsistent (e.g. missing gradient).
    #[error("invalid state: {0}")]
    State(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    /// Numerical failure such as a non-converging iteration; carries the
    /// residual of the last iterate where applicable.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("ellipse fit failed: {0}")]
    Fit(String),

    /// A marker point with the given label could not be detected.
    #[error("marker point {id} not detected: {detail}")]
    DetectionMissing { id: usize, detail: String },

    #[error("ambiguous marker geometry: {0}")]
    Ambiguity(String),

    #[error("epipolar matching failed: {0}")]
    Matching(String),

    #[error("cross-view correspondence failed: {0}")]
    Correspondence(String),

    #[error("segmentation produced an empty mask")]
    SegmentationEmpty,

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("marker not visible: {0}")]
    Visibility(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Two ground-truth points mapped to the same output cell.
    #[error("ground-truth cell collision: {0}")]
    Collision(String),

    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),

    #[error("weight file format: {0}")]
    WeightFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Wraps an error with the pipeline stage that raised it.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tag an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// CLI exit code class: 2 for data/validation errors, 3 for numerical
    /// failures. Usage errors (1) never reach this mapping.
    pub fn exit_class(&self) -> i32 {
        match self {
            Error::Dimension { .. }
            | Error::Index(_)
            | Error::Value(_)
            | Error::State(_)
            | Error::Bounds(_)
            | Error::Config(_)
            | Error::Collision(_)
            | Error::WeightFormat(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Geometry(_)
            | Error::Numeric(_)
            | Error::Fit(_)
            | Error::DetectionMissing { .. }
            | Error::Ambiguity(_)
            | Error::Matching(_)
            | Error::Correspondence(_)
            | Error::SegmentationEmpty
            | Error::Visibility(_)
            | Error::DegenerateHistogram(_) => 3,
            Error::Stage { source, .. } => source.exit_class(),
        }
    }
}
