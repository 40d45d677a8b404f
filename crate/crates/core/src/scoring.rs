//! Trial scoring, adaptive symmetric score normalisation, and EER / minDCF.
//!
//! Thresholds are half-open: a trial is accepted iff `score >= threshold`.
//! The sweep visits every distinct observed score plus a reject-all point
//! above the maximum, giving false-accept and false-reject rates that move
//! monotonically from (1, 0) to (0, 1).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{CorpusManifest, Embedding, ScoreSet, ScoredTrial, TrialList};

pub const DEFAULT_TOP_K: usize = 400;
pub const DEFAULT_P_TARGET: f64 = 0.01;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_score(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine(a.values(), b.values())
}

/// One cosine score per trial, in trial order.
pub fn score_trials(manifest: &CorpusManifest, trials: &TrialList) -> Result<ScoreSet> {
    let lookup = |id: &str| {
        manifest
            .embedding(id)
            .ok_or_else(|| Error::UnknownUtterance(id.to_string()))
    };
    let scores = trials
        .trials
        .par_iter()
        .map(|t| {
            let score = cosine_score(lookup(&t.enroll)?, lookup(&t.test)?)?;
            Ok(ScoredTrial {
                enroll: t.enroll.clone(),
                test: t.test.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet { scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ASNormConfig {
    cohort: Vec<Embedding>,
    top_k: usize,
}

impl ASNormConfig {
    pub fn new(cohort: Vec<Embedding>, top_k: usize) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::Invalid("AS-Norm cohort must be nonempty".into()));
        }
        if top_k == 0 || top_k > cohort.len() {
            return Err(Error::Invalid(format!(
                "top_k must be in 1..={}, got {top_k}",
                cohort.len()
            )));
        }
        Ok(Self { cohort, top_k })
    }

    pub fn cohort(&self) -> &[Embedding] {
        &self.cohort
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    /// Mean and population std of the `top_k` largest cohort scores
    /// against `side`.
    pub fn side_stats(&self, side: &Embedding) -> Result<(f64, f64)> {
        let scores = self
            .cohort
            .iter()
            .map(|c| cosine_score(side, c))
            .collect::<Result<Vec<_>>>()?;
        top_k_stats(&scores, self.top_k)
    }
}

/// Mean and population std of the `k` largest values.
pub fn top_k_stats(scores: &[f64], k: usize) -> Result<(f64, f64)> {
    if k == 0 || k > scores.len() {
        return Err(Error::Invalid(format!(
            "top_k {k} with {} cohort scores",
            scores.len()
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = &sorted[..k];
    let mean = top.iter().sum::<f64>() / k as f64;
    let var = top.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / k as f64;
    Ok((mean, var.sqrt()))
}

/// `½((raw − μ_e)/σ_e + (raw − μ_t)/σ_t)` from per-side cohort statistics.
pub fn asnorm_from_stats(raw: f64, enroll: (f64, f64), test: (f64, f64)) -> Result<f64> {
    if enroll.1 == 0.0 || test.1 == 0.0 {
        return Err(Error::DegenerateCohort);
    }
    Ok(0.5 * ((raw - enroll.0) / enroll.1 + (raw - test.0) / test.1))
}

pub fn asnorm(raw: f64, enroll: &Embedding, test: &Embedding, cfg: &ASNormConfig) -> Result<f64> {
    asnorm_from_stats(raw, cfg.side_stats(enroll)?, cfg.side_stats(test)?)
}

/// AS-Norm for every score; cohort statistics are computed once per
/// distinct utterance.
pub fn asnorm_scores(
    scores: &ScoreSet,
    manifest: &CorpusManifest,
    cfg: &ASNormConfig,
) -> Result<ScoreSet> {
    let mut ids: Vec<&str> = scores
        .scores
        .iter()
        .flat_map(|s| [s.enroll.as_str(), s.test.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let stats: std::collections::HashMap<&str, (f64, f64)> = ids
        .par_iter()
        .map(|&id| {
            let e = manifest
                .embedding(id)
                .ok_or_else(|| Error::UnknownUtterance(id.to_string()))?;
            Ok((id, cfg.side_stats(e)?))
        })
        .collect::<Result<_>>()?;
    let out = scores
        .scores
        .iter()
        .map(|s| {
            Ok(ScoredTrial {
                enroll: s.enroll.clone(),
                test: s.test.clone(),
                score: asnorm_from_stats(
                    s.score,
                    stats[s.enroll.as_str()],
                    stats[s.test.as_str()],
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet { scores: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DCFConfig {
    pub p_target: f64,
    pub c_fa: f64,
    pub c_miss: f64,
}

impl DCFConfig {
    pub fn new(p_target: f64, c_fa: f64, c_miss: f64) -> Result<Self> {
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::Invalid(format!(
                "p_target must be in (0, 1), got {p_target}"
            )));
        }
        if !(c_fa > 0.0 && c_fa.is_finite() && c_miss > 0.0 && c_miss.is_finite()) {
            return Err(Error::Invalid("detection costs must be positive".into()));
        }
        Ok(Self {
            p_target,
            c_fa,
            c_miss,
        })
    }

    /// Normalised detection cost for one operating point.
    pub fn cost(&self, frr: f64, far: f64) -> f64 {
        let raw = self.c_miss * self.p_target * frr + self.c_fa * (1.0 - self.p_target) * far;
        raw / (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

impl Default for DCFConfig {
    fn default() -> Self {
        Self {
            p_target: DEFAULT_P_TARGET,
            c_fa: 1.0,
            c_miss: 1.0,
        }
    }
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// `None` marks the reject-all point above every score.
    pub threshold: Option<f64>,
    pub far: f64,
    pub frr: f64,
}

/// Pairs each score with its trial label, checking the two lists line up.
pub fn labelled_scores(scores: &ScoreSet, trials: &TrialList) -> Result<Vec<(f64, bool)>> {
    if scores.len() != trials.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} trials",
            scores.len(),
            trials.len()
        )));
    }
    scores
        .scores
        .iter()
        .zip(&trials.trials)
        .enumerate()
        .map(|(i, (s, t))| {
            if s.enroll != t.enroll || s.test != t.test {
                return Err(Error::Invalid(format!(
                    "score {} ({} {}) does not match trial ({} {})",
                    i + 1,
                    s.enroll,
                    s.test,
                    t.enroll,
                    t.test
                )));
            }
            Ok((s.score, t.target))
        })
        .collect()
}

/// False-accept / false-reject rates at every distinct score threshold,
/// in increasing threshold order, followed by the reject-all point.
pub fn operating_points(labelled: &[(f64, bool)]) -> Result<Vec<OperatingPoint>> {
    let n_target = labelled.iter().filter(|(_, t)| *t).count();
    let n_non = labelled.len() - n_target;
    if n_target == 0 || n_non == 0 {
        return Err(Error::MissingClass);
    }
    let mut sorted = labelled.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (n_target as f64, n_non as f64);

    let mut points = Vec::new();
    // targets / nontargets strictly below the current threshold
    let (mut targets_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        points.push(OperatingPoint {
            threshold: Some(threshold),
            far: (n_non - non_below) as f64 / nn,
            frr: targets_below as f64 / nt,
        });
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                targets_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: None,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate from a threshold sweep.
///
/// Finds the first adjacent pair with `FRR − FAR` going from `≤ 0` to `≥ 0`.
/// An exact crossing is returned as is; otherwise the rates are linearly
/// interpolated along the segment joining the two points.
pub fn eer_from_points(points: &[OperatingPoint]) -> (f64, f64) {
    let threshold_of = |p: &OperatingPoint, fallback: f64| p.threshold.unwrap_or(fallback);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.frr - a.far;
        let db = b.frr - b.far;
        if da == 0.0 {
            return (a.far, threshold_of(&a, f64::INFINITY));
        }
        if da < 0.0 && db >= 0.0 {
            if db == 0.0 {
                let last = a.threshold.unwrap_or(f64::INFINITY);
                return (b.far, threshold_of(&b, last));
            }
            let frac = -da / (db - da);
            let eer = a.far + frac * (b.far - a.far);
            let ta = a.threshold.unwrap_or(f64::INFINITY);
            let threshold = match b.threshold {
                Some(tb) => ta + frac * (tb - ta),
                None => ta,
            };
            return (eer, threshold);
        }
    }
    // unreachable for a well-formed sweep ending at (FAR 0, FRR 1)
    let last = points[points.len() - 1];
    (last.frr, threshold_of(&last, f64::INFINITY))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

pub fn compute_eer(scores: &ScoreSet, trials: &TrialList) -> Result<EerResult> {
    let points = operating_points(&labelled_scores(scores, trials)?)?;
    let (eer, threshold) = eer_from_points(&points);
    Ok(EerResult { eer, threshold })
}

pub fn mindcf_from_points(points: &[OperatingPoint], cfg: &DCFConfig) -> f64 {
    points
        .iter()
        .map(|p| cfg.cost(p.frr, p.far))
        .fold(f64::INFINITY, f64::min)
}

pub fn compute_mindcf(scores: &ScoreSet, trials: &TrialList, cfg: &DCFConfig) -> Result<f64> {
    let points = operating_points(&labelled_scores(scores, trials)?)?;
    Ok(mindcf_from_points(&points, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Trial, UtteranceRecord};
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    pub(crate) fn fixture(targets: &[f64], nontargets: &[f64]) -> (ScoreSet, TrialList) {
        let mut scores = ScoreSet::default();
        let mut trials = TrialList::default();
        for (i, (&s, target)) in targets
            .iter()
            .map(|s| (s, true))
            .chain(nontargets.iter().map(|s| (s, false)))
            .enumerate()
        {
            let (e, t) = (format!("e{i}"), format!("t{i}"));
            scores.scores.push(ScoredTrial {
                enroll: e.clone(),
                test: t.clone(),
                score: s,
            });
            trials.trials.push(Trial {
                target,
                enroll: e,
                test: t,
            });
        }
        (scores, trials)
    }

    #[test]
    fn cosine_fixtures() {
        assert_eq!(
            cosine_score(&emb(&[0.3, -2.0]), &emb(&[0.3, -2.0])).unwrap(),
            1.0
        );
        assert_eq!(
            cosine_score(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(),
            0.0
        );
        assert_eq!(
            cosine_score(&emb(&[1.0, 0.0]), &emb(&[-1.0, 0.0])).unwrap(),
            -1.0
        );
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn trials_scored_in_order() {
        let mut m = CorpusManifest::new();
        for (id, v) in [("a", [1.0, 0.0]), ("b", [0.0, 1.0]), ("c", [1.0, 1.0])] {
            m.push(UtteranceRecord::new(id, "s", "v").unwrap(), emb(&v))
                .unwrap();
        }
        let trial = |l, e: &str, t: &str| Trial {
            target: l,
            enroll: e.into(),
            test: t.into(),
        };
        let trials = TrialList {
            trials: vec![
                trial(true, "a", "a"),
                trial(false, "a", "b"),
                trial(true, "a", "c"),
            ],
        };
        let s = score_trials(&m, &trials).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.scores[0].score, 1.0);
        assert_eq!(s.scores[1].score, 0.0);
        assert!((s.scores[2].score - 0.5f64.sqrt()).abs() < 1e-15);
        let bad = TrialList {
            trials: vec![trial(true, "a", "zz")],
        };
        let err = score_trials(&m, &bad).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn asnorm_fixture() {
        let e = top_k_stats(&[0.3, 0.2, -0.5, 0.1], 2).unwrap();
        let t = top_k_stats(&[0.0, 0.4, -0.1], 2).unwrap();
        assert!((e.0 - 0.25).abs() < 1e-15 && (e.1 - 0.05).abs() < 1e-15);
        assert!((t.0 - 0.2).abs() < 1e-15 && (t.1 - 0.2).abs() < 1e-15);
        let v = asnorm_from_stats(0.5, e, t).unwrap();
        assert!((v - 3.25).abs() < 1e-12);
        assert_eq!(v, asnorm_from_stats(0.5, t, e).unwrap());
    }

    #[test]
    fn asnorm_identity_cohort() {
        let e = emb(&[1.0, 0.0, 0.0]);
        let cfg =
            ASNormConfig::new(vec![emb(&[2.0, 0.0, 0.0]), emb(&[-1.0, 0.0, 0.0])], 2).unwrap();
        let v = asnorm(0.7, &e, &emb(&[-3.0, 0.0, 0.0]), &cfg).unwrap();
        assert!((v - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn asnorm_degenerate_and_bad_config() {
        let cfg = ASNormConfig::new(vec![emb(&[1.0, 0.0]), emb(&[1.0, 0.0])], 2).unwrap();
        assert!(matches!(
            asnorm(0.1, &emb(&[1.0, 0.0]), &emb(&[0.0, 1.0]), &cfg),
            Err(Error::DegenerateCohort)
        ));
        assert!(ASNormConfig::new(vec![], 1).is_err());
        assert!(ASNormConfig::new(vec![emb(&[1.0])], 2).is_err());
    }

    #[test]
    fn eer_fixtures() {
        let (s, t) = fixture(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(compute_eer(&s, &t).unwrap().eer, 0.0);
        let (s, t) = fixture(&[0.9, 0.7, 0.6], &[0.8, 0.3, 0.2]);
        assert!((compute_eer(&s, &t).unwrap().eer - 1.0 / 3.0).abs() < 1e-12);
        let (s, t) = fixture(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(compute_eer(&s, &t).unwrap().eer, 1.0);
    }

    #[test]
    fn eer_interpolates_between_points() {
        let (s, t) = fixture(&[0.3, 0.4], &[0.1, 0.2]);
        assert_eq!(compute_eer(&s, &t).unwrap().eer, 0.0);
        let (s, t) = fixture(&[0.2, 0.4], &[0.1, 0.3]);
        // points: (1,0) (1/2,0) (1/2,1/2) ...: exact crossing at 0.3
        let r = compute_eer(&s, &t).unwrap();
        assert_eq!(r.eer, 0.5);
        assert_eq!(r.threshold, 0.3);
        // tied scores make one step straddle FAR = FRR: (2/3, 0) -> (0, 1/2)
        let (s, t) = fixture(&[0.4, 0.9], &[0.1, 0.4, 0.4]);
        let r = compute_eer(&s, &t).unwrap();
        let frac = (2.0 / 3.0) / (0.5 + 2.0 / 3.0);
        assert!((r.eer - (2.0 / 3.0) * (1.0 - frac)).abs() < 1e-15);
        assert!((r.eer - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn mindcf_fixtures() {
        let cfg = DCFConfig::default();
        let (s, t) = fixture(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(compute_mindcf(&s, &t, &cfg).unwrap(), 0.0);
        let (s, t) = fixture(&[0.9, 0.7, 0.6], &[0.8, 0.3, 0.2]);
        assert!((compute_mindcf(&s, &t, &cfg).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let (s, t) = fixture(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
        assert!((compute_mindcf(&s, &t, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_need_both_classes() {
        let (s, t) = fixture(&[0.9, 0.8], &[]);
        assert!(matches!(compute_eer(&s, &t), Err(Error::MissingClass)));
        assert!(matches!(
            compute_mindcf(&s, &t, &DCFConfig::default()),
            Err(Error::MissingClass)
        ));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 4),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let s = cosine(&a, &b).unwrap();
            prop_assert_eq!(s, cosine(&b, &a).unwrap());
            let sa: Vec<f64> = a.iter().map(|v| v * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * beta).collect();
            prop_assert!((s - cosine(&sa, &sb).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn eer_invariant_under_increasing_transform(
            tg in prop::collection::vec(-3.0f64..3.0, 1..30),
            nt in prop::collection::vec(-3.0f64..3.0, 1..30),
        ) {
            let (s, t) = fixture(&tg, &nt);
            let mut s2 = s.clone();
            for x in &mut s2.scores { x.score = x.score.exp() * 2.0 + 1.0; }
            let a = compute_eer(&s, &t).unwrap().eer;
            let b = compute_eer(&s2, &t).unwrap().eer;
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
            let d = compute_mindcf(&s, &t, &DCFConfig::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
