//! Channel-wise and frequency-wise squeeze-and-excitation.

use rand::Rng;

use super::gate::{gate_backward, gate_forward, Axis, GateMlp, Pooling};
use crate::error::Result;
use crate::types::FeatureMap;

/// Default bottleneck reduction ratio.
pub const DEFAULT_REDUCTION: usize = 8;

/// SE parameters: a `C → C/r → C` bottleneck applied to channel means.
#[derive(Debug, Clone, PartialEq)]
pub struct SEParams {
    pub mlp: GateMlp,
}

/// fwSE parameters: a `F → F/r → F` bottleneck applied to frequency means.
#[derive(Debug, Clone, PartialEq)]
pub struct FwSEParams {
    pub mlp: GateMlp,
}

macro_rules! squeeze_params {
    ($ty:ident, $axis:expr) => {
        impl $ty {
            pub const AXIS: Axis = $axis;

            pub fn zeros(dim: usize, reduction: usize) -> Result<Self> {
                Ok(Self {
                    mlp: GateMlp::zeros(dim, reduction)?,
                })
            }

            pub fn random(
                dim: usize,
                reduction: usize,
                scale: f64,
                rng: &mut impl Rng,
            ) -> Result<Self> {
                Ok(Self {
                    mlp: GateMlp::random(dim, reduction, scale, rng)?,
                })
            }

            pub fn num_params(&self) -> usize {
                self.mlp.num_params()
            }

            /// Gate per slice along the squeezed axis.
            pub fn weights(&self, x: &FeatureMap) -> Result<Vec<f64>> {
                let (_, cache) = gate_forward(x, Self::AXIS, Pooling::Avg, &self.mlp)?;
                Ok(cache.gates().to_vec())
            }

            /// Squeezed statistics (means along the gated axis).
            pub fn squeeze(&self, x: &FeatureMap) -> Result<Vec<f64>> {
                let (_, cache) = gate_forward(x, Self::AXIS, Pooling::Avg, &self.mlp)?;
                Ok(cache.pooled_avg().to_vec())
            }

            pub fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
                gate_forward(x, Self::AXIS, Pooling::Avg, &self.mlp).map(|(y, _)| y)
            }

            /// Input gradient and flat parameter gradient (`w1, b1, w2, b2`).
            pub fn backward(
                &self,
                x: &FeatureMap,
                upstream: &FeatureMap,
            ) -> Result<(FeatureMap, Vec<f64>)> {
                x.check_same_shape(upstream, "squeeze-excitation upstream")?;
                let (_, cache) = gate_forward(x, Self::AXIS, Pooling::Avg, &self.mlp)?;
                let mut grad = vec![0.0; self.num_params()];
                let dx = gate_backward(
                    x,
                    Self::AXIS,
                    &self.mlp,
                    &cache,
                    upstream.values(),
                    &mut grad,
                );
                Ok((x.with_values(dx), grad))
            }
        }
    };
}

squeeze_params!(SEParams, Axis::Channel);
squeeze_params!(FwSEParams, Axis::Frequency);

pub fn se_apply(x: &FeatureMap, p: &SEParams) -> Result<FeatureMap> {
    p.apply(x)
}

pub fn fwse_apply(x: &FeatureMap, p: &FwSEParams) -> Result<FeatureMap> {
    p.apply(x)
}
