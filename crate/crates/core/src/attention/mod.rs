//! Attention kernels over a [`FeatureMap`]: SimAM, SE, fwSE and ft-CBAM,
//! with analytic backward passes.

mod cbam;
mod gate;
mod se;
mod simam;

pub use cbam::{ftcbam_apply, CBAMParams};
pub use gate::{Axis, GateMlp};
pub use se::{fwse_apply, se_apply, FwSEParams, SEParams, DEFAULT_REDUCTION};
pub use simam::{
    simam_apply, simam_apply_slice, simam_backward, simam_energy, simam_energy_slice, simam_gates,
    SimAMConfig, DEFAULT_LAMBDA,
};

use crate::error::Result;
use crate::types::FeatureMap;

/// A kernel identity together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionKernel {
    SimAM(SimAMConfig),
    Se(SEParams),
    FwSe(FwSEParams),
    FtCbam(CBAMParams),
}

/// Gradients of `Σ upstream ⊙ kernel(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub input: FeatureMap,
    /// Flattened in the order of [`AttentionKernel::params_flat`].
    pub params: Vec<f64>,
}

impl AttentionKernel {
    pub fn name(&self) -> &'static str {
        match self {
            AttentionKernel::SimAM(_) => "simam",
            AttentionKernel::Se(_) => "se",
            AttentionKernel::FwSe(_) => "fwse",
            AttentionKernel::FtCbam(_) => "ftcbam",
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        match self {
            AttentionKernel::SimAM(cfg) => Ok(simam_apply(x, cfg)),
            AttentionKernel::Se(p) => p.apply(x),
            AttentionKernel::FwSe(p) => p.apply(x),
            AttentionKernel::FtCbam(p) => p.apply(x),
        }
    }

    pub fn backward(&self, x: &FeatureMap, upstream: &FeatureMap) -> Result<KernelGrad> {
        let (input, params) = match self {
            AttentionKernel::SimAM(cfg) => (simam_backward(x, upstream, cfg)?, Vec::new()),
            AttentionKernel::Se(p) => p.backward(x, upstream)?,
            AttentionKernel::FwSe(p) => p.backward(x, upstream)?,
            AttentionKernel::FtCbam(p) => p.backward(x, upstream)?,
        };
        Ok(KernelGrad { input, params })
    }

    /// Trainable parameter count. SimAM has none.
    pub fn num_params(&self) -> usize {
        match self {
            AttentionKernel::SimAM(_) => 0,
            AttentionKernel::Se(p) => p.num_params(),
            AttentionKernel::FwSe(p) => p.num_params(),
            AttentionKernel::FtCbam(p) => p.num_params(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            AttentionKernel::SimAM(_) => Vec::new(),
            AttentionKernel::Se(p) => p.mlp.params_flat(),
            AttentionKernel::FwSe(p) => p.mlp.params_flat(),
            AttentionKernel::FtCbam(p) => p.params_flat(),
        }
    }

    pub fn with_params_flat(&self, flat: &[f64]) -> Result<Self> {
        Ok(match self {
            AttentionKernel::SimAM(cfg) => {
                if !flat.is_empty() {
                    return Err(crate::Error::Shape("SimAM has no parameters".into()));
                }
                AttentionKernel::SimAM(*cfg)
            }
            AttentionKernel::Se(p) => AttentionKernel::Se(SEParams {
                mlp: p.mlp.with_params_flat(flat)?,
            }),
            AttentionKernel::FwSe(p) => AttentionKernel::FwSe(FwSEParams {
                mlp: p.mlp.with_params_flat(flat)?,
            }),
            AttentionKernel::FtCbam(p) => AttentionKernel::FtCbam(p.with_params_flat(flat)?),
        })
    }
}

pub fn kernel_backward(
    kernel: &AttentionKernel,
    x: &FeatureMap,
    upstream: &FeatureMap,
) -> Result<KernelGrad> {
    kernel.backward(x, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simam_has_no_parameters() {
        let k = AttentionKernel::SimAM(SimAMConfig::default());
        assert_eq!(k.num_params(), 0);
        assert!(k.params_flat().is_empty());
    }

    #[test]
    fn backward_checks_upstream_shape() {
        let x = FeatureMap::zeros(2, 2, 2).unwrap();
        let u = FeatureMap::zeros(2, 2, 3).unwrap();
        for k in [
            AttentionKernel::SimAM(SimAMConfig::default()),
            AttentionKernel::Se(SEParams::zeros(2, 1).unwrap()),
            AttentionKernel::FwSe(FwSEParams::zeros(2, 1).unwrap()),
            AttentionKernel::FtCbam(CBAMParams::zeros((2, 2, 2), (1, 1, 1)).unwrap()),
        ] {
            assert!(kernel_backward(&k, &x, &u).is_err(), "{}", k.name());
        }
    }
}
