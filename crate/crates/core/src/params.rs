//! Text serialization of kernel parameters.
//!
//! A parameter file is a sequence of labelled blocks, one per line:
//!
//! ```text
//! name rows cols v1 v2 ... v(rows·cols)
//! ```
//!
//! Matrices are row-major and vectors are written as `n 1`. The first line
//! is `kernel <se|fwse|ftcbam|asp>`. Block names are fixed per kernel:
//! `w1 b1 w2 b2` for SE and fwSE, the same names prefixed with `channel.`,
//! `frequency.` and `temporal.` for ft-CBAM, and `w b v` for ASP.

use std::fmt::Write as _;
use std::path::Path;

use crate::attention::{CBAMParams, FwSEParams, GateMlp, SEParams};
use crate::error::{Error, Result};
use crate::formats::{read_text, save_text};
use crate::pooling::ASPParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Parameters of any kernel that has them.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelParams {
    Se(SEParams),
    FwSe(FwSEParams),
    FtCbam(CBAMParams),
    Asp(ASPParams),
}

impl KernelParams {
    pub fn kind(&self) -> &'static str {
        match self {
            KernelParams::Se(_) => "se",
            KernelParams::FwSe(_) => "fwse",
            KernelParams::FtCbam(_) => "ftcbam",
            KernelParams::Asp(_) => "asp",
        }
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        match self {
            KernelParams::Se(p) => mlp_blocks("", &p.mlp),
            KernelParams::FwSe(p) => mlp_blocks("", &p.mlp),
            KernelParams::FtCbam(p) => {
                let mut out = mlp_blocks("channel.", &p.channel);
                out.extend(mlp_blocks("frequency.", &p.frequency));
                out.extend(mlp_blocks("temporal.", &p.temporal));
                out
            }
            KernelParams::Asp(p) => vec![
                block("w", p.hidden(), p.input_dim(), &p.w),
                block("b", p.hidden(), 1, &p.b),
                block("v", p.hidden(), 1, &p.v),
            ],
        }
    }
}

fn block(name: &str, rows: usize, cols: usize, values: &[f64]) -> ParamBlock {
    ParamBlock {
        name: name.to_string(),
        rows,
        cols,
        values: values.to_vec(),
    }
}

fn mlp_blocks(prefix: &str, m: &GateMlp) -> Vec<ParamBlock> {
    vec![
        block(&format!("{prefix}w1"), m.hidden(), m.dim(), &m.w1),
        block(&format!("{prefix}b1"), m.hidden(), 1, &m.b1),
        block(&format!("{prefix}w2"), m.dim(), m.hidden(), &m.w2),
        block(&format!("{prefix}b2"), m.dim(), 1, &m.b2),
    ]
}

pub fn render_params(p: &KernelParams) -> String {
    let mut out = format!("kernel {}\n", p.kind());
    for b in p.blocks() {
        let _ = write!(out, "{} {} {}", b.name, b.rows, b.cols);
        for v in &b.values {
            let _ = write!(out, " {v:.17e}");
        }
        out.push('\n');
    }
    out
}

fn parse_blocks(text: &str) -> Result<(String, Vec<(usize, ParamBlock)>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_ascii_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty());
    let kind = match lines.next() {
        Some((_, f)) if f.len() == 2 && f[0] == "kernel" => f[1].to_string(),
        Some((line, _)) => return Err(Error::malformed(line, "expected `kernel <name>`")),
        None => return Err(Error::Invalid("empty parameter file".into())),
    };
    let mut blocks = Vec::new();
    for (line, f) in lines {
        if f.len() < 3 {
            return Err(Error::malformed(
                line,
                "expected `name rows cols values...`",
            ));
        }
        let dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::malformed(line, format!("bad dimension {s:?}")))
        };
        let (rows, cols) = (dim(f[1])?, dim(f[2])?);
        let values = f[3..]
            .iter()
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::malformed(line, format!("bad value {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != rows * cols {
            return Err(Error::malformed(
                line,
                format!("{} values for a {rows}x{cols} block", values.len()),
            ));
        }
        blocks.push((
            line,
            ParamBlock {
                name: f[0].to_string(),
                rows,
                cols,
                values,
            },
        ));
    }
    Ok((kind, blocks))
}

struct Blocks(Vec<(usize, ParamBlock)>);

impl Blocks {
    fn take(&mut self, name: &str) -> Result<ParamBlock> {
        let i = self
            .0
            .iter()
            .position(|(_, b)| b.name == name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter block {name:?}")))?;
        Ok(self.0.remove(i).1)
    }

    fn mlp(&mut self, prefix: &str) -> Result<GateMlp> {
        let w1 = self.take(&format!("{prefix}w1"))?;
        let b1 = self.take(&format!("{prefix}b1"))?;
        let w2 = self.take(&format!("{prefix}w2"))?;
        let b2 = self.take(&format!("{prefix}b2"))?;
        let (hidden, dim) = (w1.rows, w1.cols);
        let shapes = [(&b1, hidden, 1), (&w2, dim, hidden), (&b2, dim, 1)];
        if let Some((b, r, c)) = shapes.iter().find(|(b, r, c)| (b.rows, b.cols) != (*r, *c)) {
            return Err(Error::Shape(format!(
                "{} is {}x{}, expected {r}x{c}",
                b.name, b.rows, b.cols
            )));
        }
        GateMlp::new(dim, hidden, w1.values, b1.values, w2.values, b2.values)
    }

    fn finish(self) -> Result<()> {
        match self.0.first() {
            Some((line, b)) => Err(Error::malformed(
                *line,
                format!("unexpected block {:?}", b.name),
            )),
            None => Ok(()),
        }
    }
}

pub fn parse_params(text: &str) -> Result<KernelParams> {
    let (kind, blocks) = parse_blocks(text)?;
    let mut blocks = Blocks(blocks);
    let params = match kind.as_str() {
        "se" => KernelParams::Se(SEParams {
            mlp: blocks.mlp("")?,
        }),
        "fwse" => KernelParams::FwSe(FwSEParams {
            mlp: blocks.mlp("")?,
        }),
        "ftcbam" => KernelParams::FtCbam(CBAMParams::new(
            blocks.mlp("channel.")?,
            blocks.mlp("frequency.")?,
            blocks.mlp("temporal.")?,
        )),
        "asp" => {
            let w = blocks.take("w")?;
            let b = blocks.take("b")?;
            let v = blocks.take("v")?;
            KernelParams::Asp(ASPParams::new(
                w.cols, w.rows, w.values, b.values, v.values,
            )?)
        }
        other => return Err(Error::Invalid(format!("unknown kernel {other:?}"))),
    };
    blocks.finish()?;
    Ok(params)
}

pub fn load_params(path: &Path) -> Result<KernelParams> {
    parse_params(&read_text(path)?)
}

pub fn save_params(p: &KernelParams, path: &Path) -> Result<()> {
    save_text(&render_params(p), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_every_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let all = [
            KernelParams::Se(SEParams::random(8, 2, 0.5, &mut rng).unwrap()),
            KernelParams::FwSe(FwSEParams::random(6, 3, 0.5, &mut rng).unwrap()),
            KernelParams::FtCbam(CBAMParams::random((4, 6, 8), (2, 3, 4), 0.5, &mut rng).unwrap()),
            KernelParams::Asp(ASPParams::random(12, 3, 0.5, &mut rng).unwrap()),
        ];
        for p in all {
            let text = render_params(&p);
            assert_eq!(parse_params(&text).unwrap(), p, "{}", p.kind());
        }
    }

    #[test]
    fn se_layout() {
        let p = KernelParams::Se(SEParams::zeros(4, 2).unwrap());
        let text = render_params(&p);
        let heads: Vec<String> = text
            .lines()
            .map(|l| l.split(' ').take(3).collect::<Vec<_>>().join(" "))
            .collect();
        assert_eq!(heads, ["kernel se", "w1 2 4", "b1 2 1", "w2 4 2", "b2 4 1"]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_params("").is_err());
        assert!(parse_params("kernel nope\n").is_err());
        assert!(parse_params("kernel se\nw1 1 2 0 0\n").is_err());
        let mut text = render_params(&KernelParams::Se(SEParams::zeros(2, 1).unwrap()));
        text.push_str("extra 1 1 0\n");
        assert!(matches!(
            parse_params(&text),
            Err(Error::Malformed { line: 6, .. })
        ));
        assert!(matches!(
            parse_params("kernel se\nw1 2 2 0 0 0\n"),
            Err(Error::Malformed { line: 2, .. })
        ));
    }
}
