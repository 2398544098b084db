use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus shape mismatch: {0}")]
    CorpusShape(String),
    #[error("invalid input: {0}")]
    InputValidation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("stage `{stage}` failed{}: {source}", sentence.map(|s| format!(" at sentence {s}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        sentence: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, sentence: None, source: Box::new(e) },
        }
    }

    pub(crate) fn at_sentence(self, stage: &'static str, sentence: usize) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, sentence: Some(sentence), source: Box::new(e) },
        }
    }
}
