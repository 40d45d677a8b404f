//! Text interchange formats.
//!
//! | file        | line layout                                  |
//! |-------------|----------------------------------------------|
//! | embeddings  | `utt_id speaker_id video_id D v1 ... vD`     |
//! | trials      | `label enroll_utt test_utt` (label 0 or 1)   |
//! | scores      | `enroll_utt test_utt score`                  |
//! | rejections  | `utt_id round similarity`                    |
//! | truth       | `utt_id is_noisy original_speaker`           |
//!
//! Fields are separated by a single space on output; any ASCII whitespace is
//! accepted on input. Identifiers must not contain whitespace. Embedding
//! values are written with 9 significant digits, scores and similarities
//! with 6 decimals. A load either returns the whole file or fails with the
//! offending 1-based line number.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{
    CorpusManifest, Embedding, Rejection, RejectionList, ScoreSet, ScoredTrial, Trial, TrialList,
    UtteranceRecord,
};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(
    path: &Path,
    render: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    render(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_token(what: &str, token: &str) -> Result<()> {
    if token.is_empty() || token.chars().any(char::is_whitespace) {
        return Err(Error::Invalid(format!(
            "{what} {token:?} must be a nonempty whitespace-free token"
        )));
    }
    Ok(())
}

fn parse_real(line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::malformed(line, format!("cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::malformed(
            line,
            format!("non-finite value {field:?}"),
        ));
    }
    Ok(v)
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_ascii_whitespace().collect()))
}

pub fn parse_embeddings(text: &str) -> Result<CorpusManifest> {
    let mut m = CorpusManifest::new();
    for (line, fields) in numbered_lines(text) {
        if fields.len() < 5 {
            return Err(Error::malformed(
                line,
                "expected `utt speaker video D v1..vD`",
            ));
        }
        let dim: usize = fields[3]
            .parse()
            .map_err(|_| Error::malformed(line, format!("bad dimension {:?}", fields[3])))?;
        if dim == 0 || fields.len() != 4 + dim {
            return Err(Error::malformed(
                line,
                format!("dimension {dim} but {} values", fields.len() - 4),
            ));
        }
        let values = fields[4..]
            .iter()
            .map(|f| parse_real(line, f))
            .collect::<Result<Vec<_>>>()?;
        let emb = Embedding::new(values).map_err(|e| Error::malformed(line, e.to_string()))?;
        let rec = UtteranceRecord::new(fields[0], fields[1], fields[2])?;
        m.push(rec, emb).map_err(|e| match e {
            Error::DuplicateUtterance(id) => {
                Error::malformed(line, format!("duplicate utterance id {id:?}"))
            }
            other => Error::malformed(line, other.to_string()),
        })?;
    }
    Ok(m)
}

pub fn load_embeddings(path: &Path) -> Result<CorpusManifest> {
    parse_embeddings(&read_text(path)?)
}

pub fn write_embeddings(m: &CorpusManifest, w: &mut dyn Write) -> Result<()> {
    for r in m.records() {
        check_token("utt_id", &r.utt_id)?;
        check_token("speaker_id", &r.speaker_id)?;
        check_token("video_id", &r.video_id)?;
    }
    let io = |w: &mut dyn Write| -> std::io::Result<()> {
        for (r, e) in m.iter() {
            write!(
                w,
                "{} {} {} {}",
                r.utt_id,
                r.speaker_id,
                r.video_id,
                e.dim()
            )?;
            for v in e.values() {
                write!(w, " {v:.8e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    };
    io(w).map_err(|e| Error::io("<writer>", e))
}

pub fn save_embeddings(m: &CorpusManifest, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_embeddings(m, &mut buf)?;
    write_file(path, |w| w.write_all(&buf))
}

pub fn parse_trials(text: &str) -> Result<TrialList> {
    let mut trials = Vec::new();
    for (line, fields) in numbered_lines(text) {
        if fields.len() != 3 {
            return Err(Error::malformed(line, "expected `label enroll test`"));
        }
        let target = match fields[0] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::InvalidLabel {
                    line,
                    label: other.to_string(),
                })
            }
        };
        trials.push(Trial {
            target,
            enroll: fields[1].to_string(),
            test: fields[2].to_string(),
        });
    }
    Ok(TrialList { trials })
}

pub fn load_trials(path: &Path) -> Result<TrialList> {
    parse_trials(&read_text(path)?)
}

pub fn save_trials(trials: &TrialList, path: &Path) -> Result<()> {
    for t in &trials.trials {
        check_token("enroll id", &t.enroll)?;
        check_token("test id", &t.test)?;
    }
    write_file(path, |w| {
        for t in &trials.trials {
            writeln!(w, "{} {} {}", u8::from(t.target), t.enroll, t.test)?;
        }
        Ok(())
    })
}

pub fn parse_scores(text: &str) -> Result<ScoreSet> {
    let mut scores = Vec::new();
    for (line, fields) in numbered_lines(text) {
        if fields.len() != 3 {
            return Err(Error::malformed(line, "expected `enroll test score`"));
        }
        scores.push(ScoredTrial {
            enroll: fields[0].to_string(),
            test: fields[1].to_string(),
            score: parse_real(line, fields[2])?,
        });
    }
    Ok(ScoreSet { scores })
}

pub fn load_scores(path: &Path) -> Result<ScoreSet> {
    parse_scores(&read_text(path)?)
}

pub fn render_scores(scores: &ScoreSet) -> Result<String> {
    let mut out = String::new();
    for s in &scores.scores {
        check_token("enroll id", &s.enroll)?;
        check_token("test id", &s.test)?;
        if !s.score.is_finite() {
            return Err(Error::Invalid(format!(
                "non-finite score for trial {} {}",
                s.enroll, s.test
            )));
        }
        out.push_str(&format!("{} {} {:.6}\n", s.enroll, s.test, s.score));
    }
    Ok(out)
}

pub fn save_scores(scores: &ScoreSet, path: &Path) -> Result<()> {
    let text = render_scores(scores)?;
    write_file(path, |w| w.write_all(text.as_bytes()))
}

pub fn parse_rejections(text: &str) -> Result<RejectionList> {
    let mut list = RejectionList::new();
    for (line, fields) in numbered_lines(text) {
        if fields.len() != 3 {
            return Err(Error::malformed(line, "expected `utt_id round similarity`"));
        }
        let round: usize = fields[1]
            .parse()
            .map_err(|_| Error::malformed(line, format!("bad round {:?}", fields[1])))?;
        let similarity = parse_real(line, fields[2])?;
        list.push(Rejection {
            utt_id: fields[0].to_string(),
            round,
            similarity,
        })
        .map_err(|e| Error::malformed(line, e.to_string()))?;
    }
    Ok(list)
}

pub fn load_rejections(path: &Path) -> Result<RejectionList> {
    parse_rejections(&read_text(path)?)
}

pub fn render_rejections(r: &RejectionList) -> Result<String> {
    let mut out = String::new();
    for e in r.entries() {
        check_token("utt_id", &e.utt_id)?;
        out.push_str(&format!("{} {} {:.6}\n", e.utt_id, e.round, e.similarity));
    }
    Ok(out)
}

pub fn save_rejections(r: &RejectionList, path: &Path) -> Result<()> {
    let text = render_rejections(r)?;
    write_file(path, |w| w.write_all(text.as_bytes()))
}

/// One line of a synthetic ground-truth file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthEntry {
    pub utt_id: String,
    pub is_noisy: bool,
    pub original_speaker: String,
}

pub fn parse_truth(text: &str) -> Result<Vec<TruthEntry>> {
    let mut out = Vec::new();
    for (line, fields) in numbered_lines(text) {
        if fields.len() != 3 {
            return Err(Error::malformed(
                line,
                "expected `utt_id is_noisy original_speaker`",
            ));
        }
        let is_noisy = match fields[1] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::InvalidLabel {
                    line,
                    label: other.to_string(),
                })
            }
        };
        out.push(TruthEntry {
            utt_id: fields[0].to_string(),
            is_noisy,
            original_speaker: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn load_truth(path: &Path) -> Result<Vec<TruthEntry>> {
    parse_truth(&read_text(path)?)
}

pub fn save_truth(entries: &[TruthEntry], path: &Path) -> Result<()> {
    for e in entries {
        check_token("utt_id", &e.utt_id)?;
        check_token("original_speaker", &e.original_speaker)?;
    }
    write_file(path, |w| {
        for e in entries {
            writeln!(
                w,
                "{} {} {}",
                e.utt_id,
                u8::from(e.is_noisy),
                e.original_speaker
            )?;
        }
        Ok(())
    })
}

pub fn save_text(text: &str, path: &Path) -> Result<()> {
    write_file(path, |w| w.write_all(text.as_bytes()))
}
