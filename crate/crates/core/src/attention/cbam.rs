//! Frequency-and-temporal CBAM: channel, then frequency, then temporal gating.
//!
//! Each stage pools the current map along the other two axes with both
//! average and max, sends the two vectors through one shared MLP, sums the
//! outputs, and applies the logistic.

use rand::Rng;

use super::gate::{gate_backward, gate_forward, Axis, GateMlp, Pooling};
use crate::error::{Error, Result};
use crate::types::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub struct CBAMParams {
    pub channel: GateMlp,
    pub frequency: GateMlp,
    pub temporal: GateMlp,
}

impl CBAMParams {
    pub fn new(channel: GateMlp, frequency: GateMlp, temporal: GateMlp) -> Self {
        Self {
            channel,
            frequency,
            temporal,
        }
    }

    /// All-zero MLPs; `reductions` are the bottleneck ratios for (C, F, T).
    pub fn zeros(shape: (usize, usize, usize), reductions: (usize, usize, usize)) -> Result<Self> {
        Ok(Self::new(
            GateMlp::zeros(shape.0, reductions.0)?,
            GateMlp::zeros(shape.1, reductions.1)?,
            GateMlp::zeros(shape.2, reductions.2)?,
        ))
    }

    pub fn random(
        shape: (usize, usize, usize),
        reductions: (usize, usize, usize),
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self::new(
            GateMlp::random(shape.0, reductions.0, scale, rng)?,
            GateMlp::random(shape.1, reductions.1, scale, rng)?,
            GateMlp::random(shape.2, reductions.2, scale, rng)?,
        ))
    }

    fn stages(&self) -> [(Axis, &GateMlp); 3] {
        [
            (Axis::Channel, &self.channel),
            (Axis::Frequency, &self.frequency),
            (Axis::Time, &self.temporal),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.stages().iter().map(|(_, m)| m.num_params()).sum()
    }

    /// Flattened as channel, frequency, temporal MLPs.
    pub fn params_flat(&self) -> Vec<f64> {
        self.stages()
            .iter()
            .flat_map(|(_, m)| m.params_flat())
            .collect()
    }

    pub fn with_params_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let (a, rest) = flat.split_at(self.channel.num_params());
        let (b, c) = rest.split_at(self.frequency.num_params());
        Ok(Self::new(
            self.channel.with_params_flat(a)?,
            self.frequency.with_params_flat(b)?,
            self.temporal.with_params_flat(c)?,
        ))
    }

    pub fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let mut y = x.clone();
        for (axis, mlp) in self.stages() {
            y = gate_forward(&y, axis, Pooling::AvgMax, mlp)?.0;
        }
        Ok(y)
    }

    /// Pre-logistic temporal attention for `x` after the first two stages.
    pub fn temporal_pre_activation(&self, x: &FeatureMap) -> Result<Vec<f64>> {
        let y = gate_forward(x, Axis::Channel, Pooling::AvgMax, &self.channel)?.0;
        let y = gate_forward(&y, Axis::Frequency, Pooling::AvgMax, &self.frequency)?.0;
        let (_, cache) = gate_forward(&y, Axis::Time, Pooling::AvgMax, &self.temporal)?;
        Ok(cache.pre_activation())
    }

    pub fn backward(
        &self,
        x: &FeatureMap,
        upstream: &FeatureMap,
    ) -> Result<(FeatureMap, Vec<f64>)> {
        x.check_same_shape(upstream, "ft-CBAM upstream")?;
        let mut inputs = Vec::with_capacity(3);
        let mut caches = Vec::with_capacity(3);
        let mut y = x.clone();
        for (axis, mlp) in self.stages() {
            let (next, cache) = gate_forward(&y, axis, Pooling::AvgMax, mlp)?;
            inputs.push(y);
            caches.push(cache);
            y = next;
        }
        let sizes: Vec<usize> = self.stages().iter().map(|(_, m)| m.num_params()).collect();
        let mut grad = vec![0.0; self.num_params()];
        let starts = [0, sizes[0], sizes[0] + sizes[1]];
        let mut d = upstream.values().to_vec();
        for (stage, (axis, mlp)) in self.stages().into_iter().enumerate().rev() {
            let start = starts[stage];
            let g = &mut grad[start..start + sizes[stage]];
            d = gate_backward(&inputs[stage], axis, mlp, &caches[stage], &d, g);
        }
        Ok((x.with_values(d), grad))
    }
}

pub fn ftcbam_apply(x: &FeatureMap, p: &CBAMParams) -> Result<FeatureMap> {
    p.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mlps_scale_by_one_eighth() {
        let x =
            FeatureMap::from_fn(2, 3, 4, |c, f, t| c as f64 - f as f64 + 0.25 * t as f64).unwrap();
        let p = CBAMParams::zeros((2, 3, 4), (1, 1, 2)).unwrap();
        let y = ftcbam_apply(&x, &p).unwrap();
        for (a, b) in x.values().iter().zip(y.values()) {
            assert_eq!(*b, 0.125 * a);
        }
    }

    #[test]
    fn zero_map_maps_to_zero() {
        let mut rng = rand::rng();
        let p = CBAMParams::random((2, 2, 3), (1, 1, 1), 1.0, &mut rng).unwrap();
        let y = ftcbam_apply(&FeatureMap::zeros(2, 2, 3).unwrap(), &p).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temporal_pooling_with_identity_mlp() {
        // C=F=1: avg and max pooling over (C, F) both return the frame values.
        let x = FeatureMap::new(1, 1, 2, vec![2.0, 4.0]).unwrap();
        let ident = |dim: usize| {
            let eye: Vec<f64> = (0..dim * dim)
                .map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 })
                .collect();
            GateMlp::new(dim, dim, eye.clone(), vec![0.0; dim], eye, vec![0.0; dim]).unwrap()
        };
        let p = CBAMParams::new(
            GateMlp::zeros(1, 1).unwrap(),
            GateMlp::zeros(1, 1).unwrap(),
            ident(2),
        );
        // first two stages each halve the map: frames become {0.5, 1.0}
        let pre = p.temporal_pre_activation(&x).unwrap();
        assert_eq!(pre, vec![1.0, 2.0]);
        let y = ftcbam_apply(&x, &p).unwrap();
        let logistic = |z: f64| 1.0 / (1.0 + (-z).exp());
        assert!((y.values()[0] - 0.5 * logistic(1.0)).abs() < 1e-15);
        assert!((y.values()[1] - 1.0 * logistic(2.0)).abs() < 1e-15);
    }

    #[test]
    fn params_flat_roundtrip() {
        let mut rng = rand::rng();
        let p = CBAMParams::random((4, 2, 3), (2, 1, 1), 0.5, &mut rng).unwrap();
        assert_eq!(p.with_params_flat(&p.params_flat()).unwrap(), p);
        assert_eq!(p.params_flat().len(), p.num_params());
    }
}
