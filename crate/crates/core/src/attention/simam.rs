//! Parameter-free SimAM attention.
//!
//! Every neuron `t` of a channel with `M = F·T` neurons gets the minimal
//! energy
//!
//! ```text
//! e*(t) = 4(σ² + λ) / ((t − μ)² + 2σ² + 2λ)
//! ```
//!
//! where `μ` and `σ²` are the channel mean and population variance taken over
//! all `M` neurons (target included). The output is `logistic(1/e*) · x`, so
//! neurons that stand out from their channel (low energy) are amplified most.
//! `1/e* = (t − μ)²/(4(σ² + λ)) + 1/2`, which the backward pass uses directly.

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::FeatureMap;

/// Regulariser used when none is given.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimAMConfig {
    lambda: f64,
}

impl SimAMConfig {
    /// `lambda` must be finite and nonnegative. With `lambda = 0` a constant
    /// channel takes its limiting energy of 2.
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for SimAMConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ChannelStats<T> {
    mean: T,
    var: T,
}

fn channel_stats<T: Float>(values: &[T]) -> ChannelStats<T> {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return ChannelStats {
            mean: first,
            var: T::zero(),
        };
    }
    let m = T::from(values.len()).unwrap();
    let mean = values.iter().fold(T::zero(), |acc, &v| acc + v) / m;
    let var = values
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
        / m;
    ChannelStats { mean, var }
}

#[inline]
fn energy<T: Float>(t: T, stats: ChannelStats<T>, lambda: T) -> T {
    let two = T::one() + T::one();
    let spread = stats.var + lambda;
    if spread == T::zero() {
        return two;
    }
    let d = t - stats.mean;
    (two + two) * spread / (d * d + two * spread)
}

#[inline]
fn logistic<T: Float>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn map_channels<T, F>(values: &[T], plane_len: usize, per_channel: F) -> Vec<T>
where
    T: Float + Send + Sync,
    F: Fn(&[T], &mut [T]) + Send + Sync,
{
    let mut out = vec![T::zero(); values.len()];
    values
        .par_chunks(plane_len)
        .zip(out.par_chunks_mut(plane_len))
        .for_each(|(src, dst)| per_channel(src, dst));
    out
}

/// Energy map `E` for a raw channel-major buffer.
pub fn simam_energy_slice<T: Float + Send + Sync>(
    values: &[T],
    plane_len: usize,
    lambda: T,
) -> Vec<T> {
    map_channels(values, plane_len, |src, dst| {
        let stats = channel_stats(src);
        for (o, &t) in dst.iter_mut().zip(src) {
            *o = energy(t, stats, lambda);
        }
    })
}

/// SimAM output for a raw channel-major buffer; usable with `f32` or `f64`.
pub fn simam_apply_slice<T: Float + Send + Sync>(
    values: &[T],
    plane_len: usize,
    lambda: T,
) -> Vec<T> {
    map_channels(values, plane_len, |src, dst| {
        let stats = channel_stats(src);
        for (o, &t) in dst.iter_mut().zip(src) {
            *o = logistic(energy(t, stats, lambda).recip()) * t;
        }
    })
}

pub fn simam_energy(x: &FeatureMap, cfg: &SimAMConfig) -> FeatureMap {
    x.with_values(simam_energy_slice(x.values(), x.plane_len(), cfg.lambda))
}

/// Attention weights `logistic(1/E)`, each in (0, 1).
pub fn simam_gates(x: &FeatureMap, cfg: &SimAMConfig) -> FeatureMap {
    let gates = simam_energy_slice(x.values(), x.plane_len(), cfg.lambda)
        .into_iter()
        .map(|e| logistic(e.recip()))
        .collect();
    x.with_values(gates)
}

pub fn simam_apply(x: &FeatureMap, cfg: &SimAMConfig) -> FeatureMap {
    x.with_values(simam_apply_slice(x.values(), x.plane_len(), cfg.lambda))
}

/// Gradient of `Σ upstream ⊙ simam_apply(x)` with respect to `x`.
pub fn simam_backward(
    x: &FeatureMap,
    upstream: &FeatureMap,
    cfg: &SimAMConfig,
) -> Result<FeatureMap> {
    x.check_same_shape(upstream, "simam upstream")?;
    let m = x.plane_len();
    let lambda = cfg.lambda;
    let mut grad = vec![0.0; x.len()];
    x.values()
        .par_chunks(m)
        .zip(upstream.values().par_chunks(m))
        .zip(grad.par_chunks_mut(m))
        .for_each(|((xs, us), gs)| {
            let stats = channel_stats(xs);
            let a = 4.0 * (stats.var + lambda);
            let mf = m as f64;
            let gates: Vec<f64> = xs
                .iter()
                .map(|&t| logistic(energy(t, stats, lambda).recip()))
                .collect();
            if a == 0.0 {
                for ((g, &u), &gate) in gs.iter_mut().zip(us).zip(&gates) {
                    *g = u * gate;
                }
                return;
            }
            // r_i = u_i x_i g_i (1 - g_i): sensitivity of the loss to z_i = 1/E_i
            let mut r1 = 0.0;
            let mut r2 = 0.0;
            let r: Vec<f64> = xs
                .iter()
                .zip(us)
                .zip(&gates)
                .map(|((&xi, &u), &g)| {
                    let ri = u * xi * g * (1.0 - g);
                    let d = xi - stats.mean;
                    r1 += ri * d;
                    r2 += ri * d * d;
                    ri
                })
                .collect();
            for (k, g) in gs.iter_mut().enumerate() {
                let d = xs[k] - stats.mean;
                *g = us[k] * gates[k] + (2.0 / a) * (r[k] * d - r1 / mf)
                    - 8.0 * d * r2 / (mf * a * a);
            }
        });
    Ok(x.with_values(grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_channel(v: &[f64]) -> FeatureMap {
        FeatureMap::new(1, 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn constant_map_energy_is_two() {
        for (c, lambda) in [(0.1, 1e-4), (-3.7, 2.0), (1e3, 1e-9), (0.0, 0.5)] {
            let x = FeatureMap::filled(3, 5, 7, c).unwrap();
            let e = simam_energy(&x, &SimAMConfig::new(lambda).unwrap());
            assert!(e.values().iter().all(|&v| v == 2.0));
        }
    }

    #[test]
    fn two_point_channel_energy() {
        let e = simam_energy(
            &single_channel(&[1.0, -1.0]),
            &SimAMConfig::new(0.1).unwrap(),
        );
        assert!((e.values()[0] - 1.375).abs() < 1e-15);
        assert!((e.values()[1] - 1.375).abs() < 1e-15);
    }

    #[test]
    fn outlier_gets_lower_energy() {
        let cfg = SimAMConfig::new(0.0).unwrap();
        let x = single_channel(&[0.0, 0.0, 3.0]);
        let e = simam_energy(&x, &cfg);
        assert!((e.values()[2] - 1.0).abs() < 1e-15);
        assert!((e.values()[0] - 1.6).abs() < 1e-15);
        let y = simam_apply(&x, &cfg);
        assert_eq!(&y.values()[..2], &[0.0, 0.0]);
        // 3 * logistic(1)
        assert!((y.values()[2] - 2.193_175_735_89).abs() < 1e-9);
    }

    #[test]
    fn constant_one_map_output() {
        let x = FeatureMap::filled(2, 3, 4, 1.0).unwrap();
        let y = simam_apply(&x, &SimAMConfig::default());
        for &v in y.values() {
            assert!((v - 0.622_459_331_201_854_6).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_map_stays_zero() {
        let x = FeatureMap::zeros(2, 2, 2).unwrap();
        let y = simam_apply(&x, &SimAMConfig::default());
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_precision_matches_double() {
        let v: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 * 0.3 - 1.0).collect();
        let v32: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let y64 = simam_apply_slice(&v, 12, 1e-4);
        let y32 = simam_apply_slice(&v32, 12, 1e-4f32);
        for (a, b) in y64.iter().zip(&y32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_gradient_is_symmetric() {
        let x = FeatureMap::filled(1, 2, 3, 0.8).unwrap();
        let u = FeatureMap::filled(1, 2, 3, 1.0).unwrap();
        let g = simam_backward(&x, &u, &SimAMConfig::default()).unwrap();
        let first = g.values()[0];
        assert!(g.values().iter().all(|&v| (v - first).abs() < 1e-15));
    }

    #[test]
    fn rejects_negative_lambda() {
        assert!(SimAMConfig::new(-1e-3).is_err());
        assert!(SimAMConfig::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn energy_positive_and_shift_invariant(
            v in prop::collection::vec(-5.0f64..5.0, 2..40),
            k in -10.0f64..10.0,
            lambda in 1e-4f64..1.0,
        ) {
            let cfg = SimAMConfig::new(lambda).unwrap();
            let e = simam_energy(&single_channel(&v), &cfg);
            prop_assert!(e.values().iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + k).collect();
            let e2 = simam_energy(&single_channel(&shifted), &cfg);
            for (a, b) in e.values().iter().zip(e2.values()) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }

        #[test]
        fn gates_scale_homogeneous(
            v in prop::collection::vec(-5.0f64..5.0, 2..40),
            alpha in 0.1f64..10.0,
            lambda in 1e-4f64..1.0,
        ) {
            let g = simam_gates(&single_channel(&v), &SimAMConfig::new(lambda).unwrap());
            let scaled: Vec<f64> = v.iter().map(|x| x * alpha).collect();
            let g2 = simam_gates(&single_channel(&scaled), &SimAMConfig::new(lambda * alpha * alpha).unwrap());
            for (a, b) in g.values().iter().zip(g2.values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn gates_in_open_unit_interval(
            v in prop::collection::vec(-5.0f64..5.0, 1..64),
            lambda in 1e-4f64..1.0,
        ) {
            let x = single_channel(&v);
            let g = simam_gates(&x, &SimAMConfig::new(lambda).unwrap());
            prop_assert_eq!(g.shape(), x.shape());
            prop_assert!(g.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
