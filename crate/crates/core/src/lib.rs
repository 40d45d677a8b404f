//! Parameter-free SimAM attention and its parametric baselines, pooling and
//! loss layers for speaker embeddings, verification scoring with AS-Norm,
//! and iterative noisy-label detection over speaker corpora.

pub mod attention;
pub mod cli;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod inld;
pub mod kernel_check;
pub mod loss;
pub mod params;
pub mod pooling;
pub mod scoring;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CorpusManifest, Embedding, FeatureMap, Rejection, RejectionList, ScoreSet, ScoredTrial, Trial,
    TrialList, UtteranceRecord,
};
