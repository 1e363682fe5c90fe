use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum ShdlError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("training failure: {0}")]
    Training(String),

    #[error("model load error: {0}")]
    ModelLoad(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ShdlError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ShdlError>;

impl ShdlError {
    /// Wraps the error with the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            already @ ShdlError::Stage { .. } => already,
            other => ShdlError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, with stage tags peeled off.
    pub fn root(&self) -> &ShdlError {
        match self {
            ShdlError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 training.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            ShdlError::Config(_) | ShdlError::Parameter(_) => 2,
            ShdlError::Format { .. }
            | ShdlError::Io(_)
            | ShdlError::Validation(_)
            | ShdlError::ModelLoad(_) => 3,
            _ => 4,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
