use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use simam_sv::inld::{reject_below, run_inld_default, score_corpus, INLDConfig, SimilarityMode};
use simam_sv::synth::{
    evaluate_rejections, gen_corpus, inject_mislabels, speaker_mean, Granularity, SynthSpec,
};
use simam_sv::{CorpusManifest, Embedding};

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_speakers: 100,
        videos_per_speaker: 4,
        utts_per_video: 5,
        dim: 64,
        spread: 0.3,
        seed,
    }
}

#[test]
fn clean_corpus_stops_after_one_round() {
    let m = gen_corpus(&spec(21)).unwrap();
    let report = score_corpus(&m, SimilarityMode::PooledCentroid);
    assert!(report
        .entries
        .values()
        .all(|s| s.usable && s.similarity > 0.6));
    let out = run_inld_default(&m, &INLDConfig::default()).unwrap();
    assert!(out.rejections.is_empty());
    assert_eq!(out.rounds.len(), 1);
    assert_eq!(out.manifest.len(), m.len());
}

#[test]
fn far_cluster_mislabels_are_exactly_rejected() {
    let s = spec(22);
    let clean = gen_corpus(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // the second video of every 10th speaker is replaced by a cluster
    // opposite to its labelled speaker
    let mut injected = Vec::new();
    let mut m = CorpusManifest::new();
    for (r, e) in clean.iter() {
        let spk: usize = r.speaker_id[2..].parse::<usize>().unwrap() - 1;
        let e = if spk.is_multiple_of(10) && r.video_id.ends_with("_v002") {
            injected.push(r.utt_id.clone());
            let v: Vec<f64> = speaker_mean(&s, spk)
                .iter()
                .map(|x| -x + 0.03 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Embedding::new(v).unwrap()
        } else {
            e.clone()
        };
        m.push(r.clone(), e).unwrap();
    }
    let report = score_corpus(&m, SimilarityMode::PooledCentroid);
    for (id, sim) in &report.entries {
        if injected.contains(id) {
            assert!(sim.similarity < 0.0, "{id} {}", sim.similarity);
        } else {
            assert!(sim.similarity > 0.6, "{id} {}", sim.similarity);
        }
    }
    let (_, rejected) = reject_below(&report, 0.4, 1).unwrap();
    let mut got: Vec<String> = rejected
        .entries()
        .iter()
        .map(|r| r.utt_id.clone())
        .collect();
    got.sort();
    injected.sort();
    assert_eq!(got, injected);
}

#[test]
fn video_mislabels_found_within_two_rounds() {
    for seed in 0..3 {
        let clean = gen_corpus(&spec(30 + seed)).unwrap();
        let (noisy, truth) = inject_mislabels(&clean, 0.05, Granularity::Video, seed).unwrap();
        let out = run_inld_default(&noisy, &INLDConfig::default()).unwrap();
        let early: usize = out
            .rejections
            .entries()
            .iter()
            .filter(|r| r.round <= 2 && truth.is_noisy(&r.utt_id))
            .count();
        assert!(
            early as f64 >= 0.95 * truth.num_noisy() as f64,
            "seed {seed}: {early}"
        );
        let stats = evaluate_rejections(&out.rejections, &truth).unwrap();
        assert!(stats.false_rejection_rate <= 0.01);
    }
}
