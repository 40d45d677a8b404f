//! Built-in self checks: fixed-value fixtures for every kernel plus
//! finite-difference gradient checks of every backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::attention::{AttentionKernel, CBAMParams, FwSEParams, SEParams, SimAMConfig};
use crate::error::Result;
use crate::gradcheck::{check_gradient, contract};
use crate::loss::{aam_loss, AAMConfig};
use crate::pooling::{asp_backward, asp_pool, gsp_backward, gsp_pool, ASPParams};
use crate::scoring::{eer_from_points, mindcf_from_points, operating_points, DCFConfig};
use crate::synth::oracle_numeric_energy;
use crate::types::FeatureMap;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Smallest denominator for relative gradient errors, as a fraction of the
/// largest gradient entry.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Shapes exercised by the gradient suite.
pub const GRAD_SHAPES: [(usize, usize, usize); 3] = [(2, 3, 4), (3, 4, 6), (4, 8, 16)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn close(name: &str, got: f64, want: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: (got - want).abs() <= tol,
            detail: format!("got {got:.9} want {want:.9}"),
        }
    }
}

/// Worst relative error of one analytic gradient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientResult {
    pub name: String,
    pub shape: (usize, usize, usize),
    pub seed: u64,
    pub max_rel_error: f64,
}

fn reduction_for(dim: usize) -> usize {
    if dim.is_multiple_of(2) {
        2
    } else {
        1
    }
}

fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn kernel_gradients(
    name: &str,
    kernel: &AttentionKernel,
    x: &FeatureMap,
    upstream: &FeatureMap,
    out: &mut Vec<(String, f64)>,
) -> Result<()> {
    let grad = kernel.backward(x, upstream)?;
    let (c, f, t) = x.shape();
    let u = upstream.values();
    let wrt_x = check_gradient(
        |v| {
            let probe = FeatureMap::new(c, f, t, v.to_vec()).expect("same shape");
            contract(u, kernel.forward(&probe).expect("valid kernel").values())
        },
        x.values(),
        grad.input.values(),
        GRAD_STEP,
        GRAD_FLOOR,
    );
    out.push((format!("{name}/input"), wrt_x.max_rel_error));
    if kernel.num_params() > 0 {
        let theta = kernel.params_flat();
        let wrt_p = check_gradient(
            |p| {
                let k = kernel.with_params_flat(p).expect("same length");
                contract(u, k.forward(x).expect("valid kernel").values())
            },
            &theta,
            &grad.params,
            GRAD_STEP,
            GRAD_FLOOR,
        );
        out.push((format!("{name}/params"), wrt_p.max_rel_error));
    }
    Ok(())
}

/// Relative gradient errors of every kernel, pooling layer and the loss for
/// one random draw at `shape`.
pub fn gradient_suite(seed: u64, shape: (usize, usize, usize)) -> Result<Vec<GradientResult>> {
    let (c, f, t) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c * f * t;
    let x = FeatureMap::new(c, f, t, normal_vec(&mut rng, n, 1.0))?;
    let upstream = FeatureMap::new(c, f, t, normal_vec(&mut rng, n, 1.0))?;
    let mut errors = Vec::new();

    let kernels = [
        ("simam", AttentionKernel::SimAM(SimAMConfig::default())),
        (
            "se",
            AttentionKernel::Se(SEParams::random(c, reduction_for(c), 0.5, &mut rng)?),
        ),
        (
            "fwse",
            AttentionKernel::FwSe(FwSEParams::random(f, reduction_for(f), 0.5, &mut rng)?),
        ),
        (
            "ftcbam",
            AttentionKernel::FtCbam(CBAMParams::random(
                shape,
                (reduction_for(c), reduction_for(f), reduction_for(t)),
                0.5,
                &mut rng,
            )?),
        ),
    ];
    for (name, k) in &kernels {
        kernel_gradients(name, k, &x, &upstream, &mut errors)?;
    }

    let pooled_up = normal_vec(&mut rng, 2 * c * f, 1.0);
    let gx = gsp_backward(&x, &pooled_up)?;
    let e = check_gradient(
        |v| {
            contract(
                &pooled_up,
                &gsp_pool(&FeatureMap::new(c, f, t, v.to_vec()).expect("same shape")),
            )
        },
        x.values(),
        gx.values(),
        GRAD_STEP,
        GRAD_FLOOR,
    );
    errors.push(("gsp/input".to_string(), e.max_rel_error));

    let asp = ASPParams::random(c * f, 4, 0.5, &mut rng)?;
    let (gx, gp) = asp_backward(&x, &asp, &pooled_up)?;
    let e = check_gradient(
        |v| {
            let probe = FeatureMap::new(c, f, t, v.to_vec()).expect("same shape");
            contract(&pooled_up, &asp_pool(&probe, &asp).expect("valid params"))
        },
        x.values(),
        gx.values(),
        GRAD_STEP,
        GRAD_FLOOR,
    );
    errors.push(("asp/input".to_string(), e.max_rel_error));
    let e = check_gradient(
        |p| {
            let q = asp.with_params_flat(p).expect("same length");
            contract(&pooled_up, &asp_pool(&x, &q).expect("valid params"))
        },
        &asp.params_flat(),
        &gp,
        GRAD_STEP,
        GRAD_FLOOR,
    );
    errors.push(("asp/params".to_string(), e.max_rel_error));

    let classes = c * f;
    let cosines: Vec<f64> = (0..classes).map(|_| rng.random_range(-0.9..0.9)).collect();
    let label = rng.random_range(0..classes);
    let cfg = AAMConfig::default();
    let out = aam_loss(&cosines, label, &cfg)?;
    let e = check_gradient(
        |v| aam_loss(v, label, &cfg).expect("cosines in range").loss,
        &cosines,
        &out.grad,
        GRAD_STEP,
        GRAD_FLOOR,
    );
    errors.push(("aam/cosines".to_string(), e.max_rel_error));

    Ok(errors
        .into_iter()
        .map(|(name, max_rel_error)| GradientResult {
            name,
            shape,
            seed,
            max_rel_error,
        })
        .collect())
}

fn fixture_checks() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let cfg = SimAMConfig::default();

    let ones = FeatureMap::filled(2, 3, 4, 1.0)?;
    let y = crate::attention::simam_apply(&ones, &cfg);
    let worst = y
        .values()
        .iter()
        .map(|v| (v - 0.622_459_33).abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "simam constant map gate".into(),
        passed: worst <= 1e-8,
        detail: format!("max deviation {worst:.3e}"),
    });

    let x = FeatureMap::new(1, 1, 3, vec![0.0, 0.0, 3.0])?;
    let e = crate::attention::simam_energy(&x, &SimAMConfig::new(0.0)?);
    checks.push(Check::close(
        "simam outlier energy",
        e.values()[2],
        1.0,
        1e-12,
    ));

    checks.push(Check {
        name: "simam parameter count".into(),
        passed: AttentionKernel::SimAM(cfg).num_params() == 0,
        detail: "0 parameters".into(),
    });
    let se = SEParams::zeros(128, 16)?;
    checks.push(Check {
        name: "se parameter count (C=128, r=16)".into(),
        passed: se.num_params() == 2184,
        detail: format!("{} parameters", se.num_params()),
    });
    let y = SEParams::zeros(2, 1)?.apply(&ones)?;
    let worst = y
        .values()
        .iter()
        .map(|v| (v - 0.5).abs())
        .fold(0.0, f64::max);
    checks.push(Check::close(
        "se zero parameters halve input",
        worst,
        0.0,
        1e-15,
    ));

    let x = FeatureMap::new(1, 1, 2, vec![1.0, 3.0])?;
    let g = gsp_pool(&x);
    checks.push(Check::close("gsp mean", g[0], 2.0, 1e-15));
    checks.push(Check::close("gsp std", g[1], 1.0, 1e-15));

    let out = aam_loss(&[1.0, 0.0], 0, &AAMConfig::new(1.0, 0.0)?)?;
    checks.push(Check::close("aam loss s=1 m=0", out.loss, 0.313_262, 1e-6));

    let labelled = [
        (0.9, true),
        (0.7, true),
        (0.6, true),
        (0.8, false),
        (0.3, false),
        (0.2, false),
    ];
    let points = operating_points(&labelled)?;
    checks.push(Check::close(
        "eer fixture",
        eer_from_points(&points).0,
        1.0 / 3.0,
        1e-9,
    ));
    checks.push(Check::close(
        "mindcf fixture",
        mindcf_from_points(&points, &DCFConfig::default()),
        2.0 / 3.0,
        1e-9,
    ));

    let e = oracle_numeric_energy(&[1.0, -1.0], 0, 0.1)?;
    checks.push(Check::close("exact energy oracle", e, 0.0952, 1e-4));
    Ok(checks)
}

/// Fixture checks followed by one gradient check per gradient, reporting the
/// worst error over `seeds` and [`GRAD_SHAPES`].
pub fn run_kernel_checks(seeds: u64) -> Result<Vec<Check>> {
    let mut checks = fixture_checks()?;
    let mut worst: Vec<(String, f64)> = Vec::new();
    for &shape in &GRAD_SHAPES {
        for seed in 0..seeds {
            for r in gradient_suite(seed, shape)? {
                match worst.iter_mut().find(|(n, _)| *n == r.name) {
                    Some((_, e)) => *e = e.max(r.max_rel_error),
                    None => worst.push((r.name, r.max_rel_error)),
                }
            }
        }
    }
    for (name, e) in worst {
        checks.push(Check {
            name: format!("gradient {name}"),
            passed: e <= GRAD_TOLERANCE,
            detail: format!("max relative error {e:.3e}"),
        });
    }
    Ok(checks)
}

/// Fixed-width table of check results.
pub fn render_checks(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status}  {:<width$}  {}\n", c.name, c.detail));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_pass() {
        for c in fixture_checks().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn small_gradient_suite() {
        for r in gradient_suite(0, (2, 3, 4)).unwrap() {
            assert!(
                r.max_rel_error <= GRAD_TOLERANCE,
                "{} {}",
                r.name,
                r.max_rel_error
            );
        }
    }
}
