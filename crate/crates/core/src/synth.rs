//! Synthetic corpora with known label noise, plus brute-force oracles used to
//! cross-check the production kernels and metrics.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`). A corpus for seed `s` uses
//! `ChaCha8Rng::seed_from_u64(s)` with the stream set to the speaker index, so
//! each speaker's draws are independent of thread scheduling.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::TruthEntry;
use crate::scoring::OperatingPoint;
use crate::types::{CorpusManifest, Embedding, RejectionList, UtteranceRecord};

pub const DEFAULT_SPREAD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthSpec {
    pub num_speakers: usize,
    pub videos_per_speaker: usize,
    pub utts_per_video: usize,
    pub dim: usize,
    /// Norm of the expected Gaussian perturbation added to the speaker mean
    /// before renormalising; 0 puts every utterance on its mean.
    pub spread: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0
            || self.videos_per_speaker == 0
            || self.utts_per_video == 0
            || self.dim == 0
        {
            return Err(Error::Invalid(
                "corpus sizes and dim must be positive".into(),
            ));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::Invalid(format!(
                "spread must be >= 0, got {}",
                self.spread
            )));
        }
        Ok(())
    }
}

pub fn speaker_id(index: usize) -> String {
    format!("id{:05}", index + 1)
}

pub fn video_id(speaker: &str, index: usize) -> String {
    format!("{speaker}_v{:03}", index + 1)
}

pub fn utterance_id(speaker: &str, video: &str, index: usize) -> String {
    format!("{speaker}/{video}/{:05}", index + 1)
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= n;
    }
    v
}

fn speaker_rng(seed: u64, speaker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(speaker as u64);
    rng
}

/// Unit-norm mean direction of speaker `index` for `spec`.
pub fn speaker_mean(spec: &SynthSpec, index: usize) -> Vec<f64> {
    normalized(gaussian(&mut speaker_rng(spec.seed, index), spec.dim))
}

pub fn gen_corpus(spec: &SynthSpec) -> Result<CorpusManifest> {
    spec.validate()?;
    let noise_scale = spec.spread / (spec.dim as f64).sqrt();
    let per_speaker: Vec<Vec<(UtteranceRecord, Embedding)>> = (0..spec.num_speakers)
        .into_par_iter()
        .map(|s| {
            let mut rng = speaker_rng(spec.seed, s);
            let mean = normalized(gaussian(&mut rng, spec.dim));
            let spk = speaker_id(s);
            let mut out = Vec::with_capacity(spec.videos_per_speaker * spec.utts_per_video);
            for v in 0..spec.videos_per_speaker {
                let vid = video_id(&spk, v);
                for u in 0..spec.utts_per_video {
                    let noise = gaussian(&mut rng, spec.dim);
                    let e: Vec<f64> = mean
                        .iter()
                        .zip(&noise)
                        .map(|(m, g)| m + noise_scale * g)
                        .collect();
                    let record = UtteranceRecord::new(
                        utterance_id(&spk, &vid, u),
                        spk.clone(),
                        vid.clone(),
                    )?;
                    out.push((record, Embedding::new(normalized(e))?));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut manifest = CorpusManifest::new();
    for (r, e) in per_speaker.into_iter().flatten() {
        manifest.push(r, e)?;
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Video,
    Utterance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseFlag {
    pub is_noisy: bool,
    pub original_speaker: String,
}

/// Which utterances were relabelled, in manifest order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NoiseGroundTruth {
    pub flags: IndexMap<String, NoiseFlag>,
}

impl NoiseGroundTruth {
    pub fn clean(manifest: &CorpusManifest) -> Self {
        let flags = manifest
            .records()
            .iter()
            .map(|r| {
                (
                    r.utt_id.clone(),
                    NoiseFlag {
                        is_noisy: false,
                        original_speaker: r.speaker_id.clone(),
                    },
                )
            })
            .collect();
        Self { flags }
    }

    pub fn from_entries(entries: Vec<TruthEntry>) -> Result<Self> {
        let mut flags = IndexMap::with_capacity(entries.len());
        for e in entries {
            let flag = NoiseFlag {
                is_noisy: e.is_noisy,
                original_speaker: e.original_speaker,
            };
            if flags.insert(e.utt_id.clone(), flag).is_some() {
                return Err(Error::DuplicateUtterance(e.utt_id));
            }
        }
        Ok(Self { flags })
    }

    pub fn entries(&self) -> Vec<TruthEntry> {
        self.flags
            .iter()
            .map(|(id, f)| TruthEntry {
                utt_id: id.clone(),
                is_noisy: f.is_noisy,
                original_speaker: f.original_speaker.clone(),
            })
            .collect()
    }

    pub fn is_noisy(&self, utt_id: &str) -> bool {
        self.flags.get(utt_id).is_some_and(|f| f.is_noisy)
    }

    pub fn num_noisy(&self) -> usize {
        self.flags.values().filter(|f| f.is_noisy).count()
    }
}

/// Reassigns a `rate` fraction of videos (or utterances) to a different,
/// uniformly chosen speaker. Embeddings are left untouched.
///
/// The number of flipped units is `round(rate × units)`. A unit is skipped
/// when flipping it would leave its speaker with nothing correctly labelled.
pub fn inject_mislabels(
    manifest: &CorpusManifest,
    rate: f64,
    granularity: Granularity,
    seed: u64,
) -> Result<(CorpusManifest, NoiseGroundTruth)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Invalid(format!(
            "rate must lie in [0, 1), got {rate}"
        )));
    }
    let mut speakers: Vec<&str> = Vec::new();
    let mut units: IndexMap<(&str, &str), Vec<&str>> = IndexMap::new();
    for r in manifest.records() {
        if !speakers.contains(&r.speaker_id.as_str()) {
            speakers.push(&r.speaker_id);
        }
        let key = match granularity {
            Granularity::Video => (r.speaker_id.as_str(), r.video_id.as_str()),
            Granularity::Utterance => (r.speaker_id.as_str(), r.utt_id.as_str()),
        };
        units.entry(key).or_default().push(&r.utt_id);
    }
    let mut truth = NoiseGroundTruth::clean(manifest);
    let target = (rate * units.len() as f64).round() as usize;
    if target == 0 {
        return Ok((manifest.clone(), truth));
    }
    if speakers.len() < 2 {
        return Err(Error::Invalid(
            "mislabel injection needs at least two speakers".into(),
        ));
    }

    let mut unflipped: HashMap<&str, usize> = HashMap::new();
    for (spk, _) in units.keys() {
        *unflipped.entry(spk).or_default() += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut rng);

    let mut out = manifest.clone();
    let mut flipped = 0;
    for i in order {
        if flipped == target {
            break;
        }
        let (&(spk, _), utts) = units.get_index(i).expect("index in range");
        let left = unflipped.get_mut(spk).expect("speaker counted");
        if *left <= 1 {
            continue;
        }
        *left -= 1;
        let others: Vec<&str> = speakers.iter().copied().filter(|s| *s != spk).collect();
        let new_speaker = others[rng.random_range(0..others.len())];
        for utt in utts {
            out.relabel(utt, new_speaker)?;
            truth
                .flags
                .get_mut(*utt)
                .expect("utterance in truth")
                .is_noisy = true;
        }
        flipped += 1;
    }
    if flipped < target {
        return Err(Error::Invalid(format!(
            "rate {rate} needs {target} flipped units but only {flipped} can move without emptying a speaker"
        )));
    }
    Ok((out, truth))
}

/// Detection quality of a rejection list against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionStats {
    pub rejected: usize,
    pub noisy: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// 1.0 when nothing was rejected.
    pub precision: f64,
    /// 1.0 when there was no noise to find.
    pub recall: f64,
    /// Fraction of clean utterances that were rejected.
    pub false_rejection_rate: f64,
}

pub fn evaluate_rejections(
    rejections: &RejectionList,
    truth: &NoiseGroundTruth,
) -> Result<DetectionStats> {
    let mut tp = 0;
    for r in rejections.entries() {
        let flag = truth
            .flags
            .get(&r.utt_id)
            .ok_or_else(|| Error::UnknownUtterance(r.utt_id.clone()))?;
        if flag.is_noisy {
            tp += 1;
        }
    }
    let rejected = rejections.len();
    let noisy = truth.num_noisy();
    let clean = truth.flags.len() - noisy;
    let fp = rejected - tp;
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(DetectionStats {
        rejected,
        noisy,
        true_positives: tp,
        false_positives: fp,
        precision: ratio(tp, rejected),
        recall: ratio(tp, noisy),
        false_rejection_rate: if clean == 0 {
            0.0
        } else {
            fp as f64 / clean as f64
        },
    })
}

/// The per-neuron energy objective with the target excluded from the
/// "other neurons" term:
///
/// ```text
/// e(w, b) = 1/(M−1) Σ_{i≠t} (−1 − (w·x_i + b))² + (1 − (w·x_t + b))² + λ·w²
/// ```
pub fn energy_objective(values: &[f64], target: usize, lambda: f64, w: f64, b: f64) -> f64 {
    let n = (values.len() - 1) as f64;
    let others: f64 = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, &x)| (-1.0 - (w * x + b)).powi(2))
        .sum();
    others / n + (1.0 - (w * values[target] + b)).powi(2) + lambda * w * w
}

const MAX_NEWTON_STEPS: usize = 100;

/// Minimises [`energy_objective`] for every neuron of one channel, reusing
/// the channel sums.
#[derive(Debug, Clone)]
pub struct EnergyOracle {
    /// Values centred on the channel mean; the bias absorbs the shift.
    centred: Vec<f64>,
    sum1: f64,
    sum2: f64,
    lambda: f64,
    constant: bool,
}

impl EnergyOracle {
    pub fn new(values: &[f64], lambda: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Invalid("energy needs at least two neurons".into()));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("channel contains non-finite values".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let centred: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let constant = values.iter().all(|v| *v == values[0]);
        Ok(Self {
            sum1: centred.iter().sum(),
            sum2: centred.iter().map(|v| v * v).sum(),
            centred,
            lambda,
            constant,
        })
    }

    pub fn len(&self) -> usize {
        self.centred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centred.is_empty()
    }

    /// Minimum of the objective for neuron `target`.
    pub fn energy(&self, target: usize) -> Result<f64> {
        if target >= self.centred.len() {
            return Err(Error::Invalid(format!("target {target} out of range")));
        }
        if self.constant {
            // w·x + b is the same for every neuron; u = 0 gives 1 + 1
            return Ok(2.0);
        }
        let t = self.centred[target];
        let n = (self.centred.len() - 1) as f64;
        let s1 = (self.sum1 - t) / n;
        let s2 = (self.sum2 - t * t) / n;
        let lambda = self.lambda;
        let value = |w: f64, b: f64| {
            (1.0 + b).powi(2)
                + 2.0 * (1.0 + b) * w * s1
                + w * w * s2
                + (1.0 - w * t - b).powi(2)
                + lambda * w * w
        };
        let gradient = |w: f64, b: f64| {
            let gw =
                2.0 * ((1.0 + b) * s1 + w * s2) - 2.0 * t * (1.0 - w * t - b) + 2.0 * lambda * w;
            let gb = 2.0 * (1.0 + b + w * s1) - 2.0 * (1.0 - w * t - b);
            (gw, gb)
        };
        let (hww, hwb, hbb) = (2.0 * (s2 + t * t + lambda), 2.0 * (s1 + t), 4.0);
        let scale = hww.abs().max(hbb);
        let tol = 1e-12 * scale;

        let (mut w, mut b) = (0.0, 0.0);
        let mut f = value(w, b);
        let mut damping = 0.0;
        for _ in 0..MAX_NEWTON_STEPS {
            let (gw, gb) = gradient(w, b);
            if gw.abs().max(gb.abs()) <= tol {
                return Ok(f);
            }
            loop {
                let (a, d) = (hww + damping, hbb + damping);
                let det = a * d - hwb * hwb;
                if det > 1e-14 * scale * scale {
                    let dw = (d * gw - hwb * gb) / det;
                    let db = (a * gb - hwb * gw) / det;
                    let (nw, nb) = (w - dw, b - db);
                    let nf = value(nw, nb);
                    if nf <= f {
                        (w, b, f) = (nw, nb, nf);
                        damping *= 0.1;
                        break;
                    }
                }
                damping = if damping == 0.0 {
                    1e-12 * scale
                } else {
                    damping * 10.0
                };
                if damping > 1e12 * scale {
                    let (gw, gb) = gradient(w, b);
                    return Err(Error::NonConvergence {
                        residual: gw.hypot(gb),
                    });
                }
            }
        }
        let (gw, gb) = gradient(w, b);
        if gw.abs().max(gb.abs()) <= tol {
            Ok(f)
        } else {
            Err(Error::NonConvergence {
                residual: gw.hypot(gb),
            })
        }
    }
}

/// Numerical minimum of the exclusive-statistics energy for one neuron.
pub fn oracle_numeric_energy(values: &[f64], target: usize, lambda: f64) -> Result<f64> {
    EnergyOracle::new(values, lambda)?.energy(target)
}

/// FAR / FRR at every distinct score and at reject-all, counted directly.
pub fn brute_force_points(labelled: &[(f64, bool)]) -> Vec<OperatingPoint> {
    let nt = labelled.iter().filter(|(_, t)| *t).count() as f64;
    let nn = labelled.iter().filter(|(_, t)| !*t).count() as f64;
    let mut thresholds: Vec<f64> = labelled.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut points: Vec<OperatingPoint> = thresholds
        .iter()
        .map(|&tau| {
            let false_accepts = labelled.iter().filter(|(s, t)| !*t && *s >= tau).count();
            let misses = labelled.iter().filter(|(s, t)| *t && *s < tau).count();
            OperatingPoint {
                threshold: Some(tau),
                far: false_accepts as f64 / nn,
                frr: misses as f64 / nt,
            }
        })
        .collect();
    points.push(OperatingPoint {
        threshold: None,
        far: 0.0,
        frr: 1.0,
    });
    points
}

/// EER by scanning the brute-force sweep for the first FRR ≥ FAR crossing.
pub fn brute_force_eer(labelled: &[(f64, bool)]) -> f64 {
    let points = brute_force_points(labelled);
    let k = points
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("reject-all point has FRR 1 >= FAR 0");
    let b = points[k];
    if k == 0 || b.frr == b.far {
        return b.far;
    }
    let a = points[k - 1];
    let (da, db) = (a.frr - a.far, b.frr - b.far);
    let frac = -da / (db - da);
    a.far + frac * (b.far - a.far)
}

pub fn brute_force_mindcf(labelled: &[(f64, bool)], p_target: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    brute_force_points(labelled)
        .iter()
        .map(|p| (c_miss * p_target * p.frr + c_fa * (1.0 - p_target) * p.far) / norm)
        .fold(f64::INFINITY, f64::min)
}
