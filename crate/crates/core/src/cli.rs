//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 for invalid input or arguments (or a failed
//! kernel check), 2 when a file cannot be read or written.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::formats::{
    load_embeddings, load_rejections, load_scores, load_trials, load_truth, render_rejections,
    render_scores, save_embeddings, save_text, save_truth,
};
use crate::inld::{
    render_round_stats, run_inld_default, INLDConfig, SimilarityMode, DEFAULT_MAX_ROUNDS,
    DEFAULT_STOP_FRACTION,
};
use crate::kernel_check::{render_checks, run_kernel_checks};
use crate::scoring::{
    asnorm_scores, eer_from_points, labelled_scores, mindcf_from_points, operating_points,
    score_trials, ASNormConfig, DCFConfig, DEFAULT_P_TARGET, DEFAULT_TOP_K,
};
use crate::synth::{
    evaluate_rejections, gen_corpus, inject_mislabels, Granularity, NoiseGroundTruth, SynthSpec,
    DEFAULT_SPREAD,
};

const DEFAULTS: &str = "\
Model defaults:
  SimAM lambda          1e-4
  AAM scale s           32
  AAM margin m          0.2
  AS-Norm top_k         400
  INLD thresholds       0.4, 0.5 (last repeats)
  minDCF                p_target 0.01, c_miss 1, c_fa 1";

#[derive(Debug, Parser)]
#[command(name = "simam-sv", version, about = "SimAM attention kernels, speaker-verification scoring and noisy-label detection", after_help = DEFAULTS)]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run kernel fixtures and finite-difference gradient checks.
    #[command(after_help = DEFAULTS)]
    KernelCheck(KernelCheckArgs),
    /// Cosine-score a trial list.
    #[command(after_help = DEFAULTS)]
    Score(ScoreArgs),
    /// Apply AS-Norm to a score file.
    #[command(after_help = DEFAULTS)]
    Norm(NormArgs),
    /// EER and minDCF of a score file.
    #[command(after_help = DEFAULTS)]
    Metrics(MetricsArgs),
    /// Iterative noisy-label detection.
    #[command(after_help = DEFAULTS)]
    Inld(InldArgs),
    /// Generate a synthetic corpus with optional mislabels.
    #[command(after_help = DEFAULTS)]
    Synth(SynthArgs),
    /// Precision and recall of a rejection list against ground truth.
    #[command(after_help = DEFAULTS)]
    InldEval(InldEvalArgs),
}

#[derive(Debug, Args)]
struct KernelCheckArgs {
    /// Random draws per gradient check and shape.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Embedding file.
    #[arg(long)]
    embeddings: PathBuf,
    /// Trial file.
    #[arg(long)]
    trials: PathBuf,
    /// Output score file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NormArgs {
    /// Raw score file.
    #[arg(long)]
    scores: PathBuf,
    /// Embeddings of the scored utterances.
    #[arg(long)]
    embeddings: PathBuf,
    /// Cohort embedding file.
    #[arg(long)]
    cohort: PathBuf,
    /// Cohort scores kept per side.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Output score file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Score file.
    #[arg(long)]
    scores: PathBuf,
    /// Trial file with labels, in the same order as the scores.
    #[arg(long)]
    trials: PathBuf,
    #[arg(long, default_value_t = DEFAULT_P_TARGET)]
    p_target: f64,
    #[arg(long, default_value_t = 1.0)]
    c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    c_fa: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    PooledCentroid,
    PerVideoAverage,
}

impl From<ModeArg> for SimilarityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PooledCentroid => SimilarityMode::PooledCentroid,
            ModeArg::PerVideoAverage => SimilarityMode::PerVideoAverage,
        }
    }
}

#[derive(Debug, Args)]
struct InldArgs {
    /// Embedding file.
    #[arg(long)]
    embeddings: PathBuf,
    /// Comma-separated per-round thresholds; the last one repeats.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.4, 0.5])]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
    max_rounds: usize,
    /// Stop once a round rejects less than this fraction of the manifest.
    #[arg(long, default_value_t = DEFAULT_STOP_FRACTION)]
    stop_fraction: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::PooledCentroid)]
    mode: ModeArg,
    /// Output rejection file (stdout when omitted).
    #[arg(long)]
    rejections: Option<PathBuf>,
    /// Output per-round statistics (tab-separated).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Output embedding file of the kept utterances.
    #[arg(long)]
    kept: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GranularityArg {
    Video,
    Utterance,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    speakers: usize,
    #[arg(long, default_value_t = 4)]
    videos: usize,
    #[arg(long, default_value_t = 5)]
    utts: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Intra-speaker noise scale.
    #[arg(long, default_value_t = DEFAULT_SPREAD)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of videos or utterances given a wrong speaker label.
    #[arg(long, default_value_t = 0.0)]
    mislabel_rate: f64,
    #[arg(long, value_enum, default_value_t = GranularityArg::Video)]
    granularity: GranularityArg,
    /// Output embedding file.
    #[arg(long)]
    out: PathBuf,
    /// Output ground-truth file.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InldEvalArgs {
    #[arg(long)]
    rejections: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.
pub fn run(argv: impl IntoIterator<Item = String>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with(
    argv: impl IntoIterator<Item = String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(Outcome { text, ok }) => {
            let _ = out.write_all(text.as_bytes());
            if ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

struct Outcome {
    text: String,
    ok: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Self { text, ok: true }
    }
}

fn json_line(v: serde_json::Value) -> String {
    format!("{v}\n")
}

fn write_or_return(text: String, path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => save_text(&text, p).map(|_| String::new()),
        None => Ok(text),
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::KernelCheck(a) => {
            let checks = run_kernel_checks(a.seeds)?;
            let ok = checks.iter().all(|c| c.passed);
            let text = if cli.json {
                json_line(json!({ "passed": ok, "checks": checks }))
            } else {
                render_checks(&checks)
            };
            Ok(Outcome { text, ok })
        }
        Command::Score(a) => {
            let manifest = load_embeddings(&a.embeddings)?;
            let trials = load_trials(&a.trials)?;
            let scores = score_trials(&manifest, &trials)?;
            let text = write_or_return(render_scores(&scores)?, a.out.as_deref())?;
            Ok(Outcome::ok(if cli.json && a.out.is_some() {
                json_line(json!({ "scores": scores.len() }))
            } else {
                text
            }))
        }
        Command::Norm(a) => {
            let scores = load_scores(&a.scores)?;
            let manifest = load_embeddings(&a.embeddings)?;
            let cohort = load_embeddings(&a.cohort)?;
            let cfg = ASNormConfig::new(cohort.embeddings().to_vec(), a.top_k)?;
            let normed = asnorm_scores(&scores, &manifest, &cfg)?;
            let text = write_or_return(render_scores(&normed)?, a.out.as_deref())?;
            Ok(Outcome::ok(if cli.json && a.out.is_some() {
                json_line(json!({ "scores": normed.len(), "top_k": a.top_k }))
            } else {
                text
            }))
        }
        Command::Metrics(a) => {
            let scores = load_scores(&a.scores)?;
            let trials = load_trials(&a.trials)?;
            let dcf = DCFConfig::new(a.p_target, a.c_fa, a.c_miss)?;
            let points = operating_points(&labelled_scores(&scores, &trials)?)?;
            let (eer, threshold) = eer_from_points(&points);
            let mindcf = mindcf_from_points(&points, &dcf);
            let text = if cli.json {
                json_line(
                    json!({ "eer": eer, "eer_threshold": threshold, "mindcf": mindcf, "dcf": dcf }),
                )
            } else {
                format!("EER {eer:.6}\nminDCF {mindcf:.6}\n")
            };
            Ok(Outcome::ok(text))
        }
        Command::Inld(a) => {
            let manifest = load_embeddings(&a.embeddings)?;
            let cfg = INLDConfig::new(
                a.thresholds.clone(),
                a.max_rounds,
                a.stop_fraction,
                a.mode.into(),
            )?;
            let outcome = run_inld_default(&manifest, &cfg)?;
            let stats = render_round_stats(&outcome.rounds);
            if let Some(p) = &a.stats {
                save_text(&stats, p)?;
            }
            if let Some(p) = &a.kept {
                save_embeddings(&outcome.manifest, p)?;
            }
            let rejections = write_or_return(
                render_rejections(&outcome.rejections)?,
                a.rejections.as_deref(),
            )?;
            let text = if cli.json {
                json_line(json!({
                    "rounds": outcome.rounds,
                    "rejected": outcome.rejections.len(),
                    "remaining": outcome.manifest.len(),
                }))
            } else if a.rejections.is_none() {
                rejections
            } else if a.stats.is_none() {
                stats
            } else {
                String::new()
            };
            Ok(Outcome::ok(text))
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                num_speakers: a.speakers,
                videos_per_speaker: a.videos,
                utts_per_video: a.utts,
                dim: a.dim,
                spread: a.spread,
                seed: a.seed,
            };
            let clean = gen_corpus(&spec)?;
            let granularity = match a.granularity {
                GranularityArg::Video => Granularity::Video,
                GranularityArg::Utterance => Granularity::Utterance,
            };
            // a separate stream keeps the corpus itself independent of the noise draw
            let noise_seed = spec.seed ^ 0x6d69_736c_6162_656c;
            let (manifest, truth) = if a.mislabel_rate > 0.0 {
                inject_mislabels(&clean, a.mislabel_rate, granularity, noise_seed)?
            } else {
                let truth = NoiseGroundTruth::clean(&clean);
                (clean, truth)
            };
            save_embeddings(&manifest, &a.out)?;
            if let Some(p) = &a.truth {
                save_truth(&truth.entries(), p)?;
            }
            let text = if cli.json {
                json_line(
                    json!({ "spec": spec, "utterances": manifest.len(), "noisy": truth.num_noisy() }),
                )
            } else {
                format!(
                    "utterances {}\nnoisy {}\n",
                    manifest.len(),
                    truth.num_noisy()
                )
            };
            Ok(Outcome::ok(text))
        }
        Command::InldEval(a) => {
            let rejections = load_rejections(&a.rejections)?;
            let truth = NoiseGroundTruth::from_entries(load_truth(&a.truth)?)?;
            let s = evaluate_rejections(&rejections, &truth)?;
            let text = if cli.json {
                json_line(serde_json::to_value(s).map_err(|e| Error::Invalid(e.to_string()))?)
            } else {
                format!(
                    "precision {:.6}\nrecall {:.6}\nfalse_rejection_rate {:.6}\nrejected {}\nnoisy {}\n",
                    s.precision, s.recall, s.false_rejection_rate, s.rejected, s.noisy
                )
            };
            Ok(Outcome::ok(text))
        }
    }
}
