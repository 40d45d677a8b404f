//! Shared data model: feature maps, embeddings, corpus manifests, trials,
//! scores, and rejection lists.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Dense `channels × freq_bins × frames` array stored channel-major:
/// `index = c·F·T + f·T + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    freq_bins: usize,
    frames: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, freq_bins: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || freq_bins == 0 || frames == 0 {
            return Err(Error::Shape(format!(
                "feature map dims must be positive, got {channels}x{freq_bins}x{frames}"
            )));
        }
        let expected = channels * freq_bins * frames;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{channels}x{freq_bins}x{frames} map needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            channels,
            freq_bins,
            frames,
            values,
        })
    }

    pub fn zeros(channels: usize, freq_bins: usize, frames: usize) -> Result<Self> {
        Self::new(
            channels,
            freq_bins,
            frames,
            vec![0.0; channels * freq_bins * frames],
        )
    }

    pub fn filled(channels: usize, freq_bins: usize, frames: usize, value: f64) -> Result<Self> {
        Self::new(
            channels,
            freq_bins,
            frames,
            vec![value; channels * freq_bins * frames],
        )
    }

    pub fn from_fn(
        channels: usize,
        freq_bins: usize,
        frames: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * freq_bins * frames);
        for c in 0..channels {
            for fb in 0..freq_bins {
                for t in 0..frames {
                    values.push(f(c, fb, t));
                }
            }
        }
        Self::new(channels, freq_bins, frames, values)
    }

    /// Builds a map with the same shape as `self` from a raw value buffer.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            channels: self.channels,
            freq_bins: self.freq_bins,
            frames: self.frames,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.freq_bins, self.frames)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Neurons per channel (`F·T`).
    pub fn plane_len(&self) -> usize {
        self.freq_bins * self.frames
    }

    #[inline]
    pub fn index(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.freq_bins + f) * self.frames + t
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize, t: usize) -> f64 {
        self.values[self.index(c, f, t)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let m = self.plane_len();
        &self.values[c * m..(c + 1) * m]
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: expected {:?}, got {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Fixed-dimension utterance embedding with finite values and nonzero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid(
                "embedding must have at least one dimension".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding has non-finite values".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::Invalid("embedding has zero norm".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub video_id: String,
}

impl UtteranceRecord {
    pub fn new(
        utt_id: impl Into<String>,
        speaker_id: impl Into<String>,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        let rec = Self {
            utt_id: utt_id.into(),
            speaker_id: speaker_id.into(),
            video_id: video_id.into(),
        };
        for (name, v) in [
            ("utt_id", &rec.utt_id),
            ("speaker_id", &rec.speaker_id),
            ("video_id", &rec.video_id),
        ] {
            if v.is_empty() {
                return Err(Error::Invalid(format!("{name} must be nonempty")));
            }
        }
        Ok(rec)
    }
}

/// Utterance records joined to their embeddings, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    records: Vec<UtteranceRecord>,
    embeddings: Vec<Embedding>,
    by_id: HashMap<String, usize>,
}

impl CorpusManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(records: Vec<UtteranceRecord>, embeddings: Vec<Embedding>) -> Result<Self> {
        if records.len() != embeddings.len() {
            return Err(Error::Shape(format!(
                "{} records but {} embeddings",
                records.len(),
                embeddings.len()
            )));
        }
        let mut m = Self::new();
        for (r, e) in records.into_iter().zip(embeddings) {
            m.push(r, e)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, record: UtteranceRecord, embedding: Embedding) -> Result<()> {
        if record.utt_id.is_empty() || record.speaker_id.is_empty() || record.video_id.is_empty() {
            return Err(Error::Invalid("record ids must be nonempty".into()));
        }
        if let Some(d) = self.dim() {
            if embedding.dim() != d {
                return Err(Error::Shape(format!(
                    "utterance {:?} has dim {}, manifest dim is {d}",
                    record.utt_id,
                    embedding.dim()
                )));
            }
        }
        if self.by_id.contains_key(&record.utt_id) {
            return Err(Error::DuplicateUtterance(record.utt_id));
        }
        self.by_id.insert(record.utt_id.clone(), self.records.len());
        self.records.push(record);
        self.embeddings.push(embedding);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Embedding dimension, `None` for an empty manifest.
    pub fn dim(&self) -> Option<usize> {
        self.embeddings.first().map(Embedding::dim)
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UtteranceRecord, &Embedding)> {
        self.records.iter().zip(&self.embeddings)
    }

    pub fn position(&self, utt_id: &str) -> Option<usize> {
        self.by_id.get(utt_id).copied()
    }

    pub fn contains(&self, utt_id: &str) -> bool {
        self.by_id.contains_key(utt_id)
    }

    pub fn embedding(&self, utt_id: &str) -> Option<&Embedding> {
        self.position(utt_id).map(|i| &self.embeddings[i])
    }

    pub fn record(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.position(utt_id).map(|i| &self.records[i])
    }

    /// Keeps only utterances for which `keep` returns true, preserving order.
    pub fn retain(&self, mut keep: impl FnMut(&UtteranceRecord) -> bool) -> Self {
        let mut out = Self::new();
        for (r, e) in self.iter() {
            if keep(r) {
                out.by_id.insert(r.utt_id.clone(), out.records.len());
                out.records.push(r.clone());
                out.embeddings.push(e.clone());
            }
        }
        out
    }

    /// Replaces the speaker label of one utterance.
    pub fn relabel(&mut self, utt_id: &str, speaker_id: &str) -> Result<()> {
        let i = self
            .position(utt_id)
            .ok_or_else(|| Error::UnknownUtterance(utt_id.to_string()))?;
        if speaker_id.is_empty() {
            return Err(Error::Invalid("speaker_id must be nonempty".into()));
        }
        self.records[i].speaker_id = speaker_id.to_string();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<ScoredTrial>,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub utt_id: String,
    pub round: usize,
    pub similarity: f64,
}

/// Utterances removed by noisy-label detection; each id appears at most once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RejectionList {
    entries: Vec<Rejection>,
    ids: HashSet<String>,
}

impl RejectionList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: Rejection) -> Result<()> {
        if entry.round == 0 {
            return Err(Error::Invalid("rejection round must be positive".into()));
        }
        if !self.ids.insert(entry.utt_id.clone()) {
            return Err(Error::DuplicateUtterance(entry.utt_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn extend(&mut self, other: RejectionList) -> Result<()> {
        for e in other.entries {
            self.push(e)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[Rejection] {
        &self.entries
    }

    pub fn contains(&self, utt_id: &str) -> bool {
        self.ids.contains(utt_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
