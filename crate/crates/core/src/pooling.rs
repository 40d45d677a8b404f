//! Utterance-level statistics pooling over the time axis.
//!
//! Both poolings treat frame `t` as the column `h_t ∈ R^{C·F}` (index
//! `c·F + f`) and return `[mean ‖ std]`, a vector of length `2·C·F`. GSP
//! weights every frame by `1/T`; ASP learns the weights as
//! `softmax_t(vᵀ tanh(W h_t + b))`. Standard deviations use population
//! normalisation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::types::FeatureMap;

/// Attentive statistics pooling parameters with bottleneck `H`.
///
/// `w` is `H × (C·F)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ASPParams {
    input_dim: usize,
    hidden: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
}

impl ASPParams {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        w: Vec<f64>,
        b: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Shape("ASP dims must be positive".into()));
        }
        if w.len() != hidden * input_dim || b.len() != hidden || v.len() != hidden {
            return Err(Error::Shape(format!(
                "ASP params for H={hidden}, C·F={input_dim} have lengths w={} b={} v={}",
                w.len(),
                b.len(),
                v.len()
            )));
        }
        if w.iter().chain(&b).chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Invalid("ASP parameters must be finite".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            w,
            b,
            v,
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Result<Self> {
        Self::new(
            input_dim,
            hidden,
            vec![0.0; hidden * input_dim],
            vec![0.0; hidden],
            vec![0.0; hidden],
        )
    }

    pub fn random(input_dim: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let w = draw(hidden * input_dim);
        let b = draw(hidden);
        let v = draw(hidden);
        Self::new(input_dim, hidden, w, b, v)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.input_dim + 2 * self.hidden
    }

    /// Flattened as `w, b, v`.
    pub fn params_flat(&self) -> Vec<f64> {
        [&self.w[..], &self.b, &self.v].concat()
    }

    pub fn with_params_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let (w, rest) = flat.split_at(self.hidden * self.input_dim);
        let (b, v) = rest.split_at(self.hidden);
        Self::new(
            self.input_dim,
            self.hidden,
            w.to_vec(),
            b.to_vec(),
            v.to_vec(),
        )
    }

    fn check(&self, x: &FeatureMap) -> Result<()> {
        let cf = x.channels() * x.freq_bins();
        if cf != self.input_dim {
            return Err(Error::Shape(format!(
                "ASP expects C·F = {}, feature map has {cf}",
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// `x[c, f, ·]` for row `k = c·F + f` is contiguous in channel-major layout.
fn rows(x: &FeatureMap) -> std::slice::Chunks<'_, f64> {
    x.values().chunks(x.frames())
}

/// Weighted mean and population std of one row.
fn weighted_stats(row: &[f64], alpha: &[f64]) -> (f64, f64) {
    let first = row[0];
    if row.iter().all(|&v| v == first) {
        return (first, 0.0);
    }
    let mean: f64 = row.iter().zip(alpha).map(|(h, a)| a * h).sum();
    let var: f64 = row
        .iter()
        .zip(alpha)
        .map(|(h, a)| a * (h - mean) * (h - mean))
        .sum();
    (mean, var.max(0.0).sqrt())
}

fn pool_with(x: &FeatureMap, alpha: &[f64]) -> Vec<f64> {
    let cf = x.channels() * x.freq_bins();
    let mut out = vec![0.0; 2 * cf];
    for (k, row) in rows(x).enumerate() {
        let (m, s) = weighted_stats(row, alpha);
        out[k] = m;
        out[cf + k] = s;
    }
    out
}

/// Input gradient of the weighted statistics for fixed weights, plus the
/// gradient with respect to each weight `α_t`.
fn pool_backward(
    x: &FeatureMap,
    alpha: &[f64],
    pooled: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let cf = x.channels() * x.freq_bins();
    let mut dx = vec![0.0; x.len()];
    let mut dalpha = vec![0.0; alpha.len()];
    for (k, (row, drow)) in rows(x).zip(dx.chunks_mut(x.frames())).enumerate() {
        let (mean, std) = (pooled[k], pooled[cf + k]);
        let g_mean = upstream[k];
        // d std / d var; the std kink at zero gets a zero subgradient
        let g_var = if std > 0.0 {
            upstream[cf + k] / (2.0 * std)
        } else {
            0.0
        };
        for (t, (&h, d)) in row.iter().zip(drow.iter_mut()).enumerate() {
            let c = h - mean;
            *d = alpha[t] * (g_mean + 2.0 * g_var * c);
            dalpha[t] += g_mean * h + g_var * c * c;
        }
    }
    (dx, dalpha)
}

pub fn gsp_pool(x: &FeatureMap) -> Vec<f64> {
    let alpha = vec![1.0 / x.frames() as f64; x.frames()];
    pool_with(x, &alpha)
}

/// Gradient of `upstream · gsp_pool(x)` with respect to `x`.
pub fn gsp_backward(x: &FeatureMap, upstream: &[f64]) -> Result<FeatureMap> {
    let cf = x.channels() * x.freq_bins();
    if upstream.len() != 2 * cf {
        return Err(Error::Shape(format!(
            "GSP upstream needs {} values, got {}",
            2 * cf,
            upstream.len()
        )));
    }
    let alpha = vec![1.0 / x.frames() as f64; x.frames()];
    let pooled = pool_with(x, &alpha);
    let (dx, _) = pool_backward(x, &alpha, &pooled, upstream);
    Ok(x.with_values(dx))
}

struct AspForward {
    pre: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

fn frame(x: &FeatureMap, t: usize) -> Vec<f64> {
    rows(x).map(|row| row[t]).collect()
}

fn asp_forward(x: &FeatureMap, p: &ASPParams) -> Result<AspForward> {
    p.check(x)?;
    let mut pre = Vec::with_capacity(x.frames());
    let mut scores = Vec::with_capacity(x.frames());
    for t in 0..x.frames() {
        let h = frame(x, t);
        let z: Vec<f64> = (0..p.hidden)
            .map(|j| {
                let row = &p.w[j * p.input_dim..(j + 1) * p.input_dim];
                row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + p.b[j]
            })
            .collect();
        scores.push(z.iter().zip(&p.v).map(|(z, v)| v * z.tanh()).sum::<f64>());
        pre.push(z);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha = exps.iter().map(|e| e / total).collect();
    Ok(AspForward { pre, alpha })
}

/// Attention weights over frames (a probability vector).
pub fn asp_attention(x: &FeatureMap, p: &ASPParams) -> Result<Vec<f64>> {
    Ok(asp_forward(x, p)?.alpha)
}

pub fn asp_pool(x: &FeatureMap, p: &ASPParams) -> Result<Vec<f64>> {
    let fwd = asp_forward(x, p)?;
    Ok(pool_with(x, &fwd.alpha))
}

/// Gradients of `upstream · asp_pool(x)` with respect to `x` and the flat
/// parameters (`w, b, v`).
pub fn asp_backward(
    x: &FeatureMap,
    p: &ASPParams,
    upstream: &[f64],
) -> Result<(FeatureMap, Vec<f64>)> {
    let fwd = asp_forward(x, p)?;
    let cf = p.input_dim;
    if upstream.len() != 2 * cf {
        return Err(Error::Shape(format!(
            "ASP upstream needs {} values, got {}",
            2 * cf,
            upstream.len()
        )));
    }
    let pooled = pool_with(x, &fwd.alpha);
    let (mut dx, dalpha) = pool_backward(x, &fwd.alpha, &pooled, upstream);

    let weighted: f64 = fwd.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    let mut grad = vec![0.0; p.num_params()];
    let (gw, rest) = grad.split_at_mut(p.hidden * cf);
    let (gb, gv) = rest.split_at_mut(p.hidden);
    let frames = x.frames();
    for t in 0..frames {
        let d_score = fwd.alpha[t] * (dalpha[t] - weighted);
        let h = frame(x, t);
        for j in 0..p.hidden {
            let th = fwd.pre[t][j].tanh();
            gv[j] += d_score * th;
            let dz = d_score * p.v[j] * (1.0 - th * th);
            gb[j] += dz;
            let row = &p.w[j * cf..(j + 1) * cf];
            for k in 0..cf {
                gw[j * cf + k] += dz * h[k];
                dx[k * frames + t] += row[k] * dz;
            }
        }
    }
    Ok((x.with_values(dx), grad))
}
