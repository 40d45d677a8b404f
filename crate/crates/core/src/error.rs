use std::path::PathBuf;

/// Errors produced by kernels, scoring, and file I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("invalid label on line {line}: {label:?} (expected 0 or 1)")]
    InvalidLabel { line: usize, label: String },

    #[error("duplicate utterance id {0:?}")]
    DuplicateUtterance(String),

    #[error("unknown utterance id {0:?}")]
    UnknownUtterance(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("degenerate cohort: selected cohort scores have zero spread")]
    DegenerateCohort,

    #[error("metrics need at least one target and one nontarget trial")]
    MissingClass,

    #[error("speaker {speaker:?} has no utterances outside video {video:?}")]
    SingleVideoSpeaker { speaker: String, video: String },

    #[error("manifest is empty after round {round} (threshold {threshold})")]
    EmptyManifest { round: usize, threshold: f64 },

    #[error("energy minimisation did not converge (gradient norm {residual:e})")]
    NonConvergence { residual: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(line: usize, reason: impl Into<String>) -> Self {
        Error::Malformed {
            line,
            reason: reason.into(),
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
