//! Pooled-axis gating: squeeze a feature map along one axis, run a two-layer
//! bottleneck MLP, and rescale every slice by the logistic of the result.
//!
//! SE gates channels from average pooling, fwSE gates frequency bins from
//! average pooling, and each ft-CBAM stage gates one axis from the sum of the
//! MLP applied to average- and max-pooled statistics.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::FeatureMap;

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Channel,
    Frequency,
    Time,
}

impl Axis {
    pub fn len(self, x: &FeatureMap) -> usize {
        match self {
            Axis::Channel => x.channels(),
            Axis::Frequency => x.freq_bins(),
            Axis::Time => x.frames(),
        }
    }

    #[inline]
    fn coord(self, x: &FeatureMap, flat: usize) -> usize {
        match self {
            Axis::Channel => flat / x.plane_len(),
            Axis::Frequency => (flat / x.frames()) % x.freq_bins(),
            Axis::Time => flat % x.frames(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Avg,
    AvgMax,
}

/// Bottleneck MLP `W2·relu(W1·v + b1) + b2` (pre-activation output).
///
/// `w1` is `hidden × dim` and `w2` is `dim × hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMlp {
    dim: usize,
    hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub(crate) struct MlpCache {
    z1: Vec<f64>,
    h: Vec<f64>,
    pub(crate) out: Vec<f64>,
}

impl GateMlp {
    pub fn new(
        dim: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Shape(format!(
                "mlp dims must be positive ({dim}, {hidden})"
            )));
        }
        let checks = [
            ("w1", w1.len(), hidden * dim),
            ("b1", b1.len(), hidden),
            ("w2", w2.len(), dim * hidden),
            ("b2", b2.len(), dim),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Shape(format!(
                    "{name}: expected {want} values, got {got}"
                )));
            }
        }
        if [&w1, &b1, &w2, &b2]
            .iter()
            .any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Invalid("mlp parameters must be finite".into()));
        }
        Ok(Self {
            dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
        })
    }

    fn hidden_for(dim: usize, reduction: usize) -> Result<usize> {
        if reduction == 0 || !dim.is_multiple_of(reduction) {
            return Err(Error::Shape(format!(
                "reduction {reduction} must divide {dim}"
            )));
        }
        Ok(dim / reduction)
    }

    pub fn zeros(dim: usize, reduction: usize) -> Result<Self> {
        let hidden = Self::hidden_for(dim, reduction)?;
        Self::new(
            dim,
            hidden,
            vec![0.0; hidden * dim],
            vec![0.0; hidden],
            vec![0.0; dim * hidden],
            vec![0.0; dim],
        )
    }

    /// Gaussian weights with standard deviation `scale`.
    pub fn random(dim: usize, reduction: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let hidden = Self::hidden_for(dim, reduction)?;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                })
                .collect()
        };
        let w1 = draw(hidden * dim);
        let b1 = draw(hidden);
        let w2 = draw(dim * hidden);
        let b2 = draw(dim);
        Self::new(dim, hidden, w1, b1, w2, b2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim * self.hidden + self.hidden + self.dim
    }

    /// Parameters flattened as `w1, b1, w2, b2`.
    pub fn params_flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn with_params_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let (h, d) = (self.hidden, self.dim);
        let (w1, rest) = flat.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(d * h);
        Self::new(d, h, w1.to_vec(), b1.to_vec(), w2.to_vec(), b2.to_vec())
    }

    pub(crate) fn forward(&self, v: &[f64]) -> MlpCache {
        debug_assert_eq!(v.len(), self.dim);
        let z1: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.dim..(j + 1) * self.dim];
                row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + self.b1[j]
            })
            .collect();
        let h: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let out = (0..self.dim)
            .map(|i| {
                let row = &self.w2[i * self.hidden..(i + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + self.b2[i]
            })
            .collect();
        MlpCache { z1, h, out }
    }

    /// Accumulates parameter gradients into `grad` (flat `w1, b1, w2, b2`)
    /// and returns the gradient with respect to the input vector.
    pub(crate) fn backward(
        &self,
        v: &[f64],
        cache: &MlpCache,
        d_out: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let (h, d) = (self.hidden, self.dim);
        let (gw1, rest) = grad.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(d * h);

        let mut dh = vec![0.0; h];
        for i in 0..d {
            gb2[i] += d_out[i];
            for j in 0..h {
                gw2[i * h + j] += d_out[i] * cache.h[j];
                dh[j] += self.w2[i * h + j] * d_out[i];
            }
        }
        // relu'(0) taken as 0
        let dz1: Vec<f64> = dh
            .iter()
            .zip(&cache.z1)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        let mut dv = vec![0.0; d];
        for j in 0..h {
            gb1[j] += dz1[j];
            for k in 0..d {
                gw1[j * d + k] += dz1[j] * v[k];
                dv[k] += self.w1[j * d + k] * dz1[j];
            }
        }
        dv
    }
}

/// Intermediate values of one gate stage kept for the backward pass.
pub(crate) struct GateCache {
    avg: Vec<f64>,
    max: Vec<f64>,
    argmax: Vec<usize>,
    avg_mlp: MlpCache,
    max_mlp: Option<MlpCache>,
    gates: Vec<f64>,
}

impl GateCache {
    pub(crate) fn gates(&self) -> &[f64] {
        &self.gates
    }

    pub(crate) fn pooled_avg(&self) -> &[f64] {
        &self.avg
    }

    #[cfg(test)]
    pub(crate) fn pooled_max(&self) -> &[f64] {
        &self.max
    }

    pub(crate) fn pre_activation(&self) -> Vec<f64> {
        match &self.max_mlp {
            Some(m) => self
                .avg_mlp
                .out
                .iter()
                .zip(&m.out)
                .map(|(a, b)| a + b)
                .collect(),
            None => self.avg_mlp.out.clone(),
        }
    }
}

pub(crate) fn gate_forward(
    x: &FeatureMap,
    axis: Axis,
    pooling: Pooling,
    mlp: &GateMlp,
) -> Result<(FeatureMap, GateCache)> {
    let n = axis.len(x);
    if mlp.dim() != n {
        return Err(Error::Shape(format!(
            "{axis:?} gate expects {} entries, feature map has {n}",
            mlp.dim()
        )));
    }
    let per_slice = (x.len() / n) as f64;
    let mut sum = vec![0.0; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    let mut argmax = vec![0usize; n];
    for (i, &v) in x.values().iter().enumerate() {
        let k = axis.coord(x, i);
        sum[k] += v;
        if v > max[k] {
            max[k] = v;
            argmax[k] = i;
        }
    }
    let avg: Vec<f64> = sum.iter().map(|s| s / per_slice).collect();
    let avg_mlp = mlp.forward(&avg);
    let max_mlp = match pooling {
        Pooling::Avg => None,
        Pooling::AvgMax => Some(mlp.forward(&max)),
    };
    let mut cache = GateCache {
        avg,
        max,
        argmax,
        avg_mlp,
        max_mlp,
        gates: Vec::new(),
    };
    cache.gates = cache.pre_activation().into_iter().map(logistic).collect();
    let out = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| cache.gates[axis.coord(x, i)] * v)
        .collect();
    Ok((x.with_values(out), cache))
}

/// Returns the input gradient and adds parameter gradients into `grad`.
pub(crate) fn gate_backward(
    x: &FeatureMap,
    axis: Axis,
    mlp: &GateMlp,
    cache: &GateCache,
    upstream: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let n = axis.len(x);
    let per_slice = (x.len() / n) as f64;
    let mut d_gate = vec![0.0; n];
    for (i, (&u, &v)) in upstream.iter().zip(x.values()).enumerate() {
        d_gate[axis.coord(x, i)] += u * v;
    }
    let d_pre: Vec<f64> = d_gate
        .iter()
        .zip(&cache.gates)
        .map(|(d, g)| d * g * (1.0 - g))
        .collect();
    let d_avg = mlp.backward(&cache.avg, &cache.avg_mlp, &d_pre, grad);
    let d_max = cache
        .max_mlp
        .as_ref()
        .map(|m| mlp.backward(&cache.max, m, &d_pre, grad));

    let mut dx: Vec<f64> = upstream
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let k = axis.coord(x, i);
            u * cache.gates[k] + d_avg[k] / per_slice
        })
        .collect();
    if let Some(d_max) = d_max {
        for (k, &i) in cache.argmax.iter().enumerate() {
            dx[i] += d_max[k];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_coordinates() {
        let x = FeatureMap::zeros(2, 3, 4).unwrap();
        let i = x.index(1, 2, 3);
        assert_eq!(Axis::Channel.coord(&x, i), 1);
        assert_eq!(Axis::Frequency.coord(&x, i), 2);
        assert_eq!(Axis::Time.coord(&x, i), 3);
    }

    #[test]
    fn mlp_param_roundtrip() {
        let mut rng = rand::rng();
        let m = GateMlp::random(8, 2, 1.0, &mut rng).unwrap();
        assert_eq!(m.num_params(), 2 * 8 * 4 + 4 + 8);
        let back = m.with_params_flat(&m.params_flat()).unwrap();
        assert_eq!(back, m);
        assert!(GateMlp::zeros(6, 4).is_err());
    }

    #[test]
    fn pooled_statistics() {
        // C=2,F=2,T=1: channel 0 = [1,3], channel 1 = [5,7]
        let x = FeatureMap::new(2, 2, 1, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let mlp = GateMlp::zeros(2, 1).unwrap();
        let (_, cache) = gate_forward(&x, Axis::Frequency, Pooling::AvgMax, &mlp).unwrap();
        assert_eq!(cache.pooled_avg(), &[3.0, 5.0]);
        assert_eq!(cache.pooled_max(), &[5.0, 7.0]);
        let (_, cache) = gate_forward(&x, Axis::Channel, Pooling::AvgMax, &mlp).unwrap();
        assert_eq!(cache.pooled_avg(), &[2.0, 6.0]);
        assert_eq!(cache.pooled_max(), &[3.0, 7.0]);
    }
}
