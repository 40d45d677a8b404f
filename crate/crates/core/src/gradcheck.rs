//! Central-difference gradient checking.

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `Σ upstream ⊙ output`, the scalar whose gradient a backward pass returns.
pub fn contract(upstream: &[f64], output: &[f64]) -> f64 {
    neumaier_sum(upstream.iter().zip(output).map(|(u, y)| u * y))
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for every `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// turning rounding noise into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Index of the worst entry; `None` for an empty gradient.
    pub worst: Option<usize>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares `analytic` with central differences of `f` at `x`.
///
/// Each entry's error is taken relative to `max(|a|, |n|, floor·s)` where
/// `s` is the largest gradient magnitude: entries far below the gradient's
/// own scale are judged against that scale, since central differences
/// cannot resolve them beyond rounding noise.
pub fn check_gradient(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    floor: f64,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let numeric = central_difference(f, x, h);
    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = floor * scale;
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n, floor);
        if out.worst.is_none() || e > out.max_rel_error || e.is_nan() {
            out = GradCheck {
                max_rel_error: if e.is_nan() { f64::INFINITY } else { e },
                worst: Some(i),
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(v), 2.0);
        assert_eq!(v.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn cubic_derivative() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let f = |x: &[f64]| x[0] * x[1];
        let good = check_gradient(f, &[3.0, 4.0], &[4.0, 3.0], 1e-5, 1e-6);
        assert!(good.passes(1e-8));
        let bad = check_gradient(f, &[3.0, 4.0], &[4.0, 3.3], 1e-5, 1e-6);
        assert_eq!(bad.worst, Some(1));
        assert!(!bad.passes(1e-2));
        // a tiny entry is judged against the largest one
        let g = |x: &[f64]| 1e3 * x[0] + 1e-9 * x[1];
        let near = check_gradient(g, &[1.0, 1.0], &[1e3, 2e-9], 1e-5, 1e-6);
        assert!(near.passes(1e-5));
    }

    #[test]
    fn floor_bounds_the_denominator() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-3), 1e-6);
        assert_eq!(relative_error(2.0, 1.0, 1e-3), 0.5);
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
    }
}
