//! Additive angular margin softmax on cosine logits.
//!
//! For cosines `c_j = cos θ_j` and target class `y`:
//!
//! ```text
//! loss = −log( e^{s·cos(θ_y + m)} / (e^{s·cos(θ_y + m)} + Σ_{j≠y} e^{s·c_j}) )
//! ```
//!
//! `cos(θ_y + m)` is evaluated as `c_y cos m − sqrt(1 − c_y²) sin m`, which is
//! exact in `c_y` when `m = 0`.

use crate::error::{Error, Result};

pub const DEFAULT_SCALE: f64 = 32.0;
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Inputs further than this outside [-1, 1] are rejected.
const COSINE_TOLERANCE: f64 = 1e-9;
/// Cosines are clamped to `[-1 + CLAMP, 1 - CLAMP]` so the derivative of
/// `sqrt(1 − c²)` stays finite.
const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AAMConfig {
    scale: f64,
    margin: f64,
}

impl AAMConfig {
    pub fn new(scale: f64, margin: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Invalid(format!("scale must be > 0, got {scale}")));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::Invalid(format!(
                "margin must lie in [0, pi/2), got {margin}"
            )));
        }
        Ok(Self { scale, margin })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }
}

impl Default for AAMConfig {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AAMOutput {
    pub loss: f64,
    /// d loss / d cosines
    pub grad: Vec<f64>,
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub fn aam_loss(cosines: &[f64], label: usize, cfg: &AAMConfig) -> Result<AAMOutput> {
    if label >= cosines.len() {
        return Err(Error::Invalid(format!(
            "label {label} out of range for {} classes",
            cosines.len()
        )));
    }
    if let Some(c) = cosines
        .iter()
        .find(|c| !c.is_finite() || c.abs() > 1.0 + COSINE_TOLERANCE)
    {
        return Err(Error::Invalid(format!("cosine {c} outside [-1, 1]")));
    }
    let c: Vec<f64> = cosines
        .iter()
        .map(|v| v.clamp(-1.0 + CLAMP, 1.0 - CLAMP))
        .collect();
    let (s, m) = (cfg.scale, cfg.margin);
    let (cos_m, sin_m) = (m.cos(), m.sin());
    let cy = c[label];
    let sin_y = (1.0 - cy * cy).sqrt();
    let target = cy * cos_m - sin_y * sin_m;

    let logits: Vec<f64> = c
        .iter()
        .enumerate()
        .map(|(j, &cj)| if j == label { s * target } else { s * cj })
        .collect();
    let lse = log_sum_exp(&logits);
    let z_y = logits[label];
    let others_max = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    // a dominant target leaves a tiny loss that `lse − z_y` would cancel away
    let loss = if z_y >= others_max {
        logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label)
            .map(|(_, &z)| (z - z_y).exp())
            .sum::<f64>()
            .ln_1p()
    } else {
        lse - z_y
    };

    let mut grad: Vec<f64> = logits.iter().map(|z| s * (z - lse).exp()).collect();
    // d cos(θ+m) / dc = cos m + c sin m / sqrt(1 − c²)
    let d_target = cos_m + cy * sin_m / sin_y;
    let p_y = (logits[label] - lse).exp();
    grad[label] = s * (p_y - 1.0) * d_target;
    Ok(AAMOutput {
        loss: loss.max(0.0),
        grad,
    })
}

/// Plain softmax cross-entropy of `logits` for class `label`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_margin_unit_scale() {
        let out = aam_loss(&[1.0, 0.0], 0, &AAMConfig::new(1.0, 0.0).unwrap()).unwrap();
        assert!((out.loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-11);
        assert!((out.loss - 0.313_262).abs() < 1e-6);
    }

    #[test]
    fn default_config_confident_target() {
        let out = aam_loss(&[1.0, 0.0], 0, &AAMConfig::default()).unwrap();
        // the unit cosine is clamped to 1 − 1e-12 before the margin is added
        let theta = (1.0 - 1e-12f64).acos();
        let expected = (-32.0 * (theta + 0.2).cos()).exp().ln_1p();
        assert!((out.loss - expected).abs() <= 1e-9 * expected);
        assert!((out.loss - 2.4e-14).abs() < 0.1e-14);
    }

    #[test]
    fn identical_classes_give_log_two() {
        for c in [-0.7, 0.0, 0.3, 0.95] {
            let out = aam_loss(&[c, c], 0, &AAMConfig::new(32.0, 0.0).unwrap()).unwrap();
            assert!((out.loss - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        let cfg = AAMConfig::default();
        assert!(aam_loss(&[1.0 + 1e-6, 0.0], 0, &cfg).is_err());
        assert!(aam_loss(&[0.5, 0.0], 2, &cfg).is_err());
        assert!(aam_loss(&[1.0 + 1e-10, 0.0], 0, &cfg).is_ok());
        assert!(AAMConfig::new(0.0, 0.2).is_err());
        assert!(AAMConfig::new(32.0, 1.6).is_err());
    }

    #[test]
    fn gradient_at_unit_cosine_is_finite() {
        let out = aam_loss(&[1.0, -1.0, 0.2], 0, &AAMConfig::default()).unwrap();
        assert!(out.grad.iter().all(|g| g.is_finite()));
    }

    proptest! {
        #[test]
        fn zero_margin_is_cross_entropy(
            c in prop::collection::vec(-0.999f64..0.999, 2..10),
            s in 0.5f64..64.0,
            pick in 0usize..100,
        ) {
            let y = pick % c.len();
            let out = aam_loss(&c, y, &AAMConfig::new(s, 0.0).unwrap()).unwrap();
            let logits: Vec<f64> = c.iter().map(|v| s * v).collect();
            prop_assert!((out.loss - softmax_cross_entropy(&logits, y)).abs() <= 1e-12);
        }

        #[test]
        fn loss_nondecreasing_in_margin(
            c in prop::collection::vec(-0.99f64..0.99, 2..8),
            m1 in 0.0f64..1.5,
            m2 in 0.0f64..1.5,
        ) {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            let theta = c[0].acos();
            prop_assume!(theta + hi < std::f64::consts::PI);
            let a = aam_loss(&c, 0, &AAMConfig::new(16.0, lo).unwrap()).unwrap().loss;
            let b = aam_loss(&c, 0, &AAMConfig::new(16.0, hi).unwrap()).unwrap().loss;
            prop_assert!(b >= a - 1e-12);
        }
    }
}
