//! Iterative noisy-label detection.
//!
//! Each utterance is compared with the mean embedding of its speaker's
//! *other* videos (leave-one-video-out centroid). Utterances whose cosine
//! similarity falls below the round's threshold are rejected, the manifest
//! shrinks, and the loop repeats with centroids recomputed from what is left
//! (or from whatever a caller-supplied rescoring step returns, e.g. embeddings
//! from a retrained network).
//!
//! Speakers that appear in a single video fall back to leave-one-utterance-out
//! centroids inside that video. A speaker's only utterance has nothing to be
//! compared with: it is reported with `usable = false` and is never rejected.

use std::collections::HashMap;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scoring::cosine;
use crate::types::{CorpusManifest, Embedding, Rejection, RejectionList};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.4, 0.5];
pub const DEFAULT_MAX_ROUNDS: usize = 5;
pub const DEFAULT_STOP_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// Cosine against the pooled mean of all other-video utterances.
    #[default]
    PooledCentroid,
    /// Mean of the cosines against each other video's own centroid.
    PerVideoAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct INLDConfig {
    thresholds: Vec<f64>,
    pub max_rounds: usize,
    pub stop_fraction: f64,
    pub mode: SimilarityMode,
}

impl INLDConfig {
    pub fn new(
        thresholds: Vec<f64>,
        max_rounds: usize,
        stop_fraction: f64,
        mode: SimilarityMode,
    ) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Invalid("at least one threshold is required".into()));
        }
        if let Some(t) = thresholds.iter().find(|t| !(-1.0..=1.0).contains(*t)) {
            return Err(Error::Invalid(format!("threshold {t} outside [-1, 1]")));
        }
        if max_rounds == 0 {
            return Err(Error::Invalid("max_rounds must be positive".into()));
        }
        if !(0.0..1.0).contains(&stop_fraction) {
            return Err(Error::Invalid(format!(
                "stop_fraction {stop_fraction} outside [0, 1)"
            )));
        }
        Ok(Self {
            thresholds,
            max_rounds,
            stop_fraction,
            mode,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Threshold for a 1-based round; the last one repeats.
    pub fn threshold_for(&self, round: usize) -> f64 {
        let i = round.saturating_sub(1).min(self.thresholds.len() - 1);
        self.thresholds[i]
    }
}

impl Default for INLDConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            stop_fraction: DEFAULT_STOP_FRACTION,
            mode: SimilarityMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Similarity {
    pub similarity: f64,
    pub usable: bool,
}

/// Per-utterance similarities keyed by utterance id, in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityReport {
    pub entries: IndexMap<String, Similarity>,
}

impl SimilarityReport {
    pub fn get(&self, utt_id: &str) -> Option<Similarity> {
        self.entries.get(utt_id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

/// Sum of embeddings accumulated in a fixed order.
#[derive(Debug, Clone)]
struct Sum {
    total: Vec<f64>,
    count: usize,
}

impl Sum {
    fn new(dim: usize) -> Self {
        Self {
            total: vec![0.0; dim],
            count: 0,
        }
    }

    fn add(&mut self, v: &[f64]) {
        add_into(&mut self.total, v);
        self.count += 1;
    }

    fn mean(&self) -> Vec<f64> {
        self.total.iter().map(|v| v / self.count as f64).collect()
    }
}

/// Sum of every part except `skip`, added in order. Summing directly rather
/// than subtracting from a total keeps leave-one-out centroids exact.
fn sum_except(parts: &[Sum], skip: usize, dim: usize) -> Sum {
    let mut out = Sum::new(dim);
    for (i, p) in parts.iter().enumerate() {
        if i != skip {
            add_into(&mut out.total, &p.total);
            out.count += p.count;
        }
    }
    out
}

/// One speaker's utterances grouped by video. Videos and utterances are
/// ordered by id so sums do not depend on manifest order.
struct SpeakerGroup<'a> {
    videos: Vec<(&'a str, Vec<(&'a str, &'a Embedding)>)>,
}

impl<'a> SpeakerGroup<'a> {
    fn video_sums(&self, dim: usize) -> Vec<Sum> {
        self.videos
            .iter()
            .map(|(_, utts)| {
                let mut s = Sum::new(dim);
                for (_, e) in utts {
                    s.add(e.values());
                }
                s
            })
            .collect()
    }
}

type VideoMembers<'a> = HashMap<&'a str, Vec<(&'a str, &'a Embedding)>>;

fn group_speakers(manifest: &CorpusManifest) -> Vec<(&str, SpeakerGroup<'_>)> {
    let mut by_speaker: HashMap<&str, VideoMembers<'_>> = HashMap::new();
    for (r, e) in manifest.iter() {
        by_speaker
            .entry(&r.speaker_id)
            .or_default()
            .entry(&r.video_id)
            .or_default()
            .push((&r.utt_id, e));
    }
    let mut groups: Vec<(&str, SpeakerGroup)> = by_speaker
        .into_iter()
        .map(|(spk, videos)| {
            let mut videos: Vec<_> = videos.into_iter().collect();
            videos.sort_unstable_by(|a, b| a.0.cmp(b.0));
            for (_, utts) in &mut videos {
                utts.sort_unstable_by(|a, b| a.0.cmp(b.0));
            }
            (spk, SpeakerGroup { videos })
        })
        .collect();
    groups.sort_unstable_by(|a, b| a.0.cmp(b.0));
    groups
}

/// Mean of the speaker's embeddings from videos other than `video`.
pub fn loo_centroid(manifest: &CorpusManifest, speaker: &str, video: &str) -> Result<Embedding> {
    let dim = manifest
        .dim()
        .ok_or_else(|| Error::Invalid("empty manifest".into()))?;
    let groups = group_speakers(manifest);
    let (_, group) = groups
        .iter()
        .find(|(s, _)| *s == speaker)
        .ok_or_else(|| Error::Invalid(format!("unknown speaker {speaker:?}")))?;
    let sums = group.video_sums(dim);
    let skip = group
        .videos
        .iter()
        .position(|(v, _)| *v == video)
        .unwrap_or(usize::MAX);
    let rest = sum_except(&sums, skip, dim);
    if rest.count == 0 {
        return Err(Error::SingleVideoSpeaker {
            speaker: speaker.to_string(),
            video: video.to_string(),
        });
    }
    Embedding::new(rest.mean())
}

fn score_speaker(
    group: &SpeakerGroup<'_>,
    dim: usize,
    mode: SimilarityMode,
) -> Vec<(String, Similarity)> {
    let sums = group.video_sums(dim);
    let mut out = Vec::new();
    let unusable = Similarity {
        similarity: 0.0,
        usable: false,
    };
    let sim = |a: &[f64], b: &[f64]| match cosine(a, b) {
        Ok(s) => Similarity {
            similarity: s,
            usable: true,
        },
        // a centroid can cancel to zero; nothing to compare against
        Err(_) => unusable,
    };

    if group.videos.len() == 1 {
        let (_, utts) = &group.videos[0];
        let singles: Vec<Sum> = utts
            .iter()
            .map(|(_, e)| {
                let mut s = Sum::new(dim);
                s.add(e.values());
                s
            })
            .collect();
        for (ui, (id, e)) in utts.iter().enumerate() {
            let s = if utts.len() < 2 {
                unusable
            } else {
                sim(e.values(), &sum_except(&singles, ui, dim).mean())
            };
            out.push((id.to_string(), s));
        }
        return out;
    }

    let video_means: Vec<Vec<f64>> = sums.iter().map(Sum::mean).collect();
    for (vi, (_, utts)) in group.videos.iter().enumerate() {
        let pooled = sum_except(&sums, vi, dim).mean();
        for (id, e) in utts {
            let s = match mode {
                SimilarityMode::PooledCentroid => sim(e.values(), &pooled),
                SimilarityMode::PerVideoAverage => {
                    let mut acc = 0.0;
                    let mut n = 0usize;
                    for (vj, mean) in video_means.iter().enumerate() {
                        if vj == vi {
                            continue;
                        }
                        let s = sim(e.values(), mean);
                        if s.usable {
                            acc += s.similarity;
                            n += 1;
                        }
                    }
                    if n == 0 {
                        unusable
                    } else {
                        Similarity {
                            similarity: acc / n as f64,
                            usable: true,
                        }
                    }
                }
            };
            out.push((id.to_string(), s));
        }
    }
    out
}

/// Similarity of every utterance to its speaker's other-video centroid.
pub fn score_corpus(manifest: &CorpusManifest, mode: SimilarityMode) -> SimilarityReport {
    let Some(dim) = manifest.dim() else {
        return SimilarityReport::default();
    };
    let groups = group_speakers(manifest);
    let scored: HashMap<String, Similarity> = groups
        .par_iter()
        .flat_map_iter(|(_, g)| score_speaker(g, dim, mode))
        .collect();
    let entries = manifest
        .records()
        .iter()
        .map(|r| (r.utt_id.clone(), scored[&r.utt_id]))
        .collect();
    SimilarityReport { entries }
}

/// Ids kept and rejections made when applying `threshold` in `round`.
pub fn reject_below(
    report: &SimilarityReport,
    threshold: f64,
    round: usize,
) -> Result<(Vec<String>, RejectionList)> {
    let mut kept = Vec::with_capacity(report.len());
    let mut rejected = RejectionList::new();
    for (id, s) in &report.entries {
        if s.usable && s.similarity < threshold {
            rejected.push(Rejection {
                utt_id: id.clone(),
                round,
                similarity: s.similarity,
            })?;
        } else {
            kept.push(id.clone());
        }
    }
    Ok((kept, rejected))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundStats {
    pub round: usize,
    pub threshold: f64,
    pub rejected: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone)]
pub struct INLDOutcome {
    pub manifest: CorpusManifest,
    pub rejections: RejectionList,
    pub rounds: Vec<RoundStats>,
}

/// Runs score → reject rounds until the rejected fraction of a round drops
/// below `stop_fraction` or `max_rounds` is reached.
///
/// `rescore` produces the similarity report for the current manifest; it
/// stands in for retraining and re-extracting embeddings between rounds.
pub fn run_inld<F>(
    manifest: &CorpusManifest,
    cfg: &INLDConfig,
    mut rescore: F,
) -> Result<INLDOutcome>
where
    F: FnMut(&CorpusManifest) -> Result<SimilarityReport>,
{
    let mut current = manifest.clone();
    let mut rejections = RejectionList::new();
    let mut rounds = Vec::new();
    for round in 1..=cfg.max_rounds {
        let threshold = cfg.threshold_for(round);
        let report = rescore(&current)?;
        if let Some(r) = current
            .records()
            .iter()
            .find(|r| report.get(&r.utt_id).is_none())
        {
            return Err(Error::UnknownUtterance(format!(
                "{} missing from similarity report",
                r.utt_id
            )));
        }
        let (_, delta) = reject_below(&report, threshold, round)?;
        let before = current.len();
        let rejected = delta.len();
        current = current.retain(|r| !delta.contains(&r.utt_id));
        if current.is_empty() && before > 0 {
            return Err(Error::EmptyManifest { round, threshold });
        }
        rejections.extend(delta)?;
        rounds.push(RoundStats {
            round,
            threshold,
            rejected,
            remaining: current.len(),
        });
        if before == 0 || (rejected as f64) < cfg.stop_fraction * before as f64 {
            break;
        }
    }
    Ok(INLDOutcome {
        manifest: current,
        rejections,
        rounds,
    })
}

/// [`run_inld`] with similarities recomputed from the fixed embeddings.
pub fn run_inld_default(manifest: &CorpusManifest, cfg: &INLDConfig) -> Result<INLDOutcome> {
    let mode = cfg.mode;
    run_inld(manifest, cfg, |m| Ok(score_corpus(m, mode)))
}

/// Tab-separated per-round statistics with a header line.
pub fn render_round_stats(rounds: &[RoundStats]) -> String {
    let mut out = String::from("round\tthreshold\trejected\tremaining\n");
    for r in rounds {
        out.push_str(&format!(
            "{}\t{:.6}\t{}\t{}\n",
            r.round, r.threshold, r.rejected, r.remaining
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::UtteranceRecord;
    use proptest::prelude::*;

    fn manifest(rows: &[(&str, &str, &str, [f64; 2])]) -> CorpusManifest {
        let mut m = CorpusManifest::new();
        for (u, s, v, e) in rows {
            m.push(
                UtteranceRecord::new(*u, *s, *v).unwrap(),
                Embedding::new(e.to_vec()).unwrap(),
            )
            .unwrap();
        }
        m
    }

    #[test]
    fn centroid_excludes_own_video() {
        let m = manifest(&[
            ("u1", "s", "v1", [1.0, 0.0]),
            ("u2", "s", "v1", [0.0, 2.0]),
            ("u3", "s", "v2", [3.0, 3.0]),
            ("x", "other", "v9", [5.0, 5.0]),
        ]);
        assert_eq!(loo_centroid(&m, "s", "v1").unwrap().values(), &[3.0, 3.0]);
        assert_eq!(loo_centroid(&m, "s", "v2").unwrap().values(), &[0.5, 1.0]);
        assert!(matches!(
            loo_centroid(&m, "other", "v9"),
            Err(Error::SingleVideoSpeaker { .. })
        ));
    }

    #[test]
    fn identical_other_video_embeddings() {
        let m = manifest(&[
            ("a", "s", "v1", [0.2, 0.9]),
            ("b", "s", "v2", [1.0, 1.0]),
            ("c", "s", "v3", [1.0, 1.0]),
        ]);
        assert_eq!(loo_centroid(&m, "s", "v1").unwrap().values(), &[1.0, 1.0]);
    }

    #[test]
    fn single_video_speakers_fall_back() {
        let m = manifest(&[
            ("a", "s", "v", [1.0, 0.0]),
            ("b", "s", "v", [0.0, 1.0]),
            ("c", "s", "v", [0.0, 1.0]),
            ("lonely", "t", "w", [1.0, 1.0]),
        ]);
        let r = score_corpus(&m, SimilarityMode::PooledCentroid);
        // a vs mean(b, c) = (0, 1)
        assert_eq!(r.get("a").unwrap().similarity, 0.0);
        assert!(r.get("a").unwrap().usable);
        // b vs mean(a, c) = (0.5, 0.5)
        assert!((r.get("b").unwrap().similarity - 0.5f64.sqrt()).abs() < 1e-15);
        let lonely = r.get("lonely").unwrap();
        assert!(!lonely.usable);
        let (_, rej) = reject_below(&r, 1.0, 1).unwrap();
        assert!(!rej.contains("lonely"));
    }

    #[test]
    fn similarity_fixtures() {
        let m = manifest(&[("a", "s", "v1", [1.0, 0.0]), ("b", "s", "v2", [0.0, 1.0])]);
        let r = score_corpus(&m, SimilarityMode::PooledCentroid);
        assert_eq!(r.get("a").unwrap().similarity, 0.0);
        let m = manifest(&[("a", "s", "v1", [0.6, 0.8]), ("b", "s", "v2", [0.6, 0.8])]);
        let r = score_corpus(&m, SimilarityMode::PooledCentroid);
        assert!((r.get("a").unwrap().similarity - 1.0).abs() < 1e-15);
        let phi = 0.7f64;
        let m = manifest(&[
            ("a", "s", "v1", [1.0, 0.0]),
            ("b", "s", "v2", [phi.cos(), phi.sin()]),
        ]);
        let r = score_corpus(&m, SimilarityMode::PooledCentroid);
        assert!((r.get("a").unwrap().similarity - phi.cos()).abs() < 1e-15);
        assert!((r.get("b").unwrap().similarity - phi.cos()).abs() < 1e-15);
    }

    #[test]
    fn per_video_average_mode() {
        let m = manifest(&[
            ("a", "s", "v1", [1.0, 0.0]),
            ("b", "s", "v2", [0.0, 1.0]),
            ("c", "s", "v3", [1.0, 0.0]),
        ]);
        let r = score_corpus(&m, SimilarityMode::PerVideoAverage);
        // a: mean(cos(a, b), cos(a, c)) = 0.5
        assert!((r.get("a").unwrap().similarity - 0.5).abs() < 1e-15);
        let pooled = score_corpus(&m, SimilarityMode::PooledCentroid);
        assert!((pooled.get("a").unwrap().similarity - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nothing_rejected_at_minus_one() {
        let m = manifest(&[("a", "s", "v1", [1.0, 0.0]), ("b", "s", "v2", [-1.0, 0.0])]);
        let r = score_corpus(&m, SimilarityMode::PooledCentroid);
        let (kept, rej) = reject_below(&r, -1.0, 1).unwrap();
        assert!(rej.is_empty());
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn thresholds_repeat_last() {
        let cfg = INLDConfig::default();
        assert_eq!(cfg.threshold_for(1), 0.4);
        assert_eq!(cfg.threshold_for(2), 0.5);
        assert_eq!(cfg.threshold_for(7), 0.5);
        assert!(INLDConfig::new(vec![], 1, 0.0, SimilarityMode::PooledCentroid).is_err());
        assert!(INLDConfig::new(vec![1.5], 1, 0.0, SimilarityMode::PooledCentroid).is_err());
    }

    #[test]
    fn single_round_when_capped() {
        let m = manifest(&[
            ("a", "s", "v1", [1.0, 0.0]),
            ("b", "s", "v2", [1.0, 0.1]),
            ("c", "s", "v3", [1.0, -0.1]),
            ("d", "s", "v4", [-1.0, 0.2]),
        ]);
        let cfg = INLDConfig::new(vec![0.4], 1, 0.0, SimilarityMode::PooledCentroid).unwrap();
        let out = run_inld_default(&m, &cfg).unwrap();
        assert_eq!(out.rounds.len(), 1);
        assert_eq!(out.rejections.len(), 1);
        assert!(out.rejections.contains("d"));
    }

    #[test]
    fn over_aggressive_threshold_errors() {
        let m = manifest(&[("a", "s", "v1", [1.0, 0.0]), ("b", "s", "v2", [0.0, 1.0])]);
        let cfg = INLDConfig::new(vec![0.5], 3, 0.0, SimilarityMode::PooledCentroid).unwrap();
        assert!(matches!(
            run_inld_default(&m, &cfg),
            Err(Error::EmptyManifest { .. })
        ));
    }

    fn corpus(seed: u64, speakers: usize, videos: usize, utts: usize) -> CorpusManifest {
        let spec = crate::synth::SynthSpec {
            num_speakers: speakers,
            videos_per_speaker: videos,
            utts_per_video: utts,
            dim: 6,
            spread: 1.0,
            seed,
        };
        crate::synth::gen_corpus(&spec).unwrap()
    }

    proptest! {
        #[test]
        fn rejection_monotone_in_threshold(seed in 0u64..500, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let m = corpus(seed, 4, 3, 2);
            let r = score_corpus(&m, SimilarityMode::PooledCentroid);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (_, low) = reject_below(&r, lo, 1).unwrap();
            let (_, high) = reject_below(&r, hi, 1).unwrap();
            prop_assert!(low.entries().iter().all(|e| high.contains(&e.utt_id)));
        }

        #[test]
        fn scores_ignore_manifest_order(seed in 0u64..500, rotate in 0usize..40) {
            let m = corpus(seed, 3, 3, 2);
            let n = m.len();
            let mut rotated = CorpusManifest::new();
            for i in 0..n {
                let j = (i + rotate) % n;
                rotated.push(m.records()[j].clone(), m.embeddings()[j].clone()).unwrap();
            }
            for mode in [SimilarityMode::PooledCentroid, SimilarityMode::PerVideoAverage] {
                let a = score_corpus(&m, mode);
                let b = score_corpus(&rotated, mode);
                for r in m.records() {
                    prop_assert_eq!(a.get(&r.utt_id), b.get(&r.utt_id));
                }
            }
        }

        #[test]
        fn removal_is_local_to_the_speaker(seed in 0u64..500, pick in 0usize..100) {
            let m = corpus(seed, 4, 2, 3);
            let victim = m.records()[pick % m.len()].clone();
            let before = score_corpus(&m, SimilarityMode::PooledCentroid);
            let after = score_corpus(&m.retain(|r| r.utt_id != victim.utt_id), SimilarityMode::PooledCentroid);
            for r in m.records().iter().filter(|r| r.speaker_id != victim.speaker_id) {
                prop_assert_eq!(before.get(&r.utt_id), after.get(&r.utt_id));
            }
        }

        #[test]
        fn pairs_are_symmetric(seed in 0u64..500) {
            let m = corpus(seed, 3, 2, 1);
            let r = score_corpus(&m, SimilarityMode::PooledCentroid);
            for pair in m.records().chunks(2) {
                prop_assert_eq!(r.get(&pair[0].utt_id), r.get(&pair[1].utt_id));
            }
        }
    }

    #[test]
    fn stats_render_as_tsv() {
        let s = render_round_stats(&[RoundStats {
            round: 1,
            threshold: 0.4,
            rejected: 3,
            remaining: 97,
        }]);
        assert_eq!(
            s,
            "round\tthreshold\trejected\tremaining\n1\t0.400000\t3\t97\n"
        );
    }
}
