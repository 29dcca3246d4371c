//! Central finite-difference verification of analytic gradients.

use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// A scalar function of a flat parameter vector with an analytic gradient.
///
/// Vector-valued operations are checked through a fixed random projection of
/// their output, which every op in this crate exposes this way.
pub trait Differentiable {
    fn num_params(&self) -> usize;

    fn value(&self, params: &[f64]) -> Result<f64>;

    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Adapter for closure pairs.
pub struct FnDifferentiable<F, G> {
    pub n: usize,
    pub value: F,
    pub value_and_grad: G,
}

impl<F, G> Differentiable for FnDifferentiable<F, G>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn num_params(&self) -> usize {
        self.n
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        (self.value)(params)
    }

    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.value_and_grad)(params)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub max_rel_err: f64,
    /// Parameter index with the largest relative error.
    pub worst_index: usize,
    pub rel_errs: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub diagnostics: Option<String>,
}

impl GradCheckReport {
    fn failure(tolerance: f64, diagnostics: String) -> Self {
        Self {
            passed: false,
            tolerance,
            max_rel_err: f64::INFINITY,
            worst_index: 0,
            rel_errs: Vec::new(),
            analytic: Vec::new(),
            numeric: Vec::new(),
            diagnostics: Some(diagnostics),
        }
    }
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient of `op` at `params` against central differences.
///
/// Passes iff every entry's relative error is at most `tolerance`. Errors from
/// the op and non-finite values are reported as failures, never propagated.
pub fn grad_check<D: Differentiable + ?Sized>(
    op: &D,
    params: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    if params.len() != op.num_params() {
        return GradCheckReport::failure(
            tolerance,
            format!(
                "op expects {} params, got {}",
                op.num_params(),
                params.len()
            ),
        );
    }
    let (value, analytic) = match op.value_and_grad(params) {
        Ok(v) => v,
        Err(e) => return GradCheckReport::failure(tolerance, format!("forward failed: {e}")),
    };
    if !value.is_finite() {
        return GradCheckReport::failure(tolerance, format!("non-finite value {value}"));
    }
    if analytic.len() != params.len() {
        return GradCheckReport::failure(
            tolerance,
            format!(
                "gradient has {} entries for {} params",
                analytic.len(),
                params.len()
            ),
        );
    }
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return GradCheckReport::failure(tolerance, format!("analytic gradient {i} is not finite"));
    }

    let mut x = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = op.value(&x);
        x[i] = orig - FD_STEP;
        let minus = op.value(&x);
        x[i] = orig;
        match (plus, minus) {
            (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => {
                numeric.push((p - m) / (2.0 * FD_STEP))
            }
            (Ok(p), Ok(m)) => {
                return GradCheckReport::failure(
                    tolerance,
                    format!("non-finite perturbed values at param {i}: {p}, {m}"),
                )
            }
            (Err(e), _) | (_, Err(e)) => {
                return GradCheckReport::failure(
                    tolerance,
                    format!("perturbed forward failed at param {i}: {e}"),
                )
            }
        }
    }

    let rel_errs: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .collect();
    let (worst_index, max_rel_err) = rel_errs
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |b, (i, e)| if e > b.1 { (i, e) } else { b });
    let passed = max_rel_err <= tolerance;
    let diagnostics = (!passed).then(|| {
        format!(
            "param {worst_index}: analytic {} vs numeric {} (rel err {max_rel_err:e})",
            analytic[worst_index], numeric[worst_index]
        )
    });
    GradCheckReport {
        passed,
        tolerance,
        max_rel_err,
        worst_index,
        rel_errs,
        analytic,
        numeric,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cross_entropy, softmax};

    #[test]
    fn linear_map_is_exact() {
        let w = [0.5, -1.25, 2.0, 0.75];
        let op = FnDifferentiable {
            n: 4,
            value: |x: &[f64]| Ok(x.iter().zip(&w).map(|(a, b)| a * b).sum()),
            value_and_grad: |x: &[f64]| {
                Ok((x.iter().zip(&w).map(|(a, b)| a * b).sum(), w.to_vec()))
            },
        };
        let r = grad_check(&op, &[0.1, 0.2, -0.3, 0.4], 1e-10);
        assert!(r.passed, "{:?}", r.diagnostics);
        assert!(r.max_rel_err <= 1e-10);
    }

    fn softmax_ce(label: usize) -> impl Differentiable {
        FnDifferentiable {
            n: 4,
            value: move |x: &[f64]| cross_entropy(&softmax(x)?, label),
            value_and_grad: move |x: &[f64]| {
                let p = softmax(x)?;
                let mut g = p.clone();
                g[label] -= 1.0;
                Ok((cross_entropy(&p, label)?, g))
            },
        }
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let r = grad_check(&softmax_ce(2), &[0.3, -0.6, 1.1, 0.2], 1e-6);
        assert!(r.passed, "{:?}", r.diagnostics);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let op = FnDifferentiable {
            n: 2,
            value: |x: &[f64]| Ok(x[0] * x[0] + 3.0 * x[1]),
            value_and_grad: |x: &[f64]| {
                Ok((x[0] * x[0] + 3.0 * x[1], vec![2.0 * x[0] * 1.01, 3.0]))
            },
        };
        let r = grad_check(&op, &[0.7, 0.1], 1e-4);
        assert!(!r.passed);
        assert_eq!(r.worst_index, 0);
        assert!(r.diagnostics.unwrap().contains("param 0"));
    }

    #[test]
    fn non_finite_values_fail_with_diagnostics() {
        let op = FnDifferentiable {
            n: 1,
            value: |x: &[f64]| Ok(x[0].ln()),
            value_and_grad: |x: &[f64]| Ok((x[0].ln(), vec![1.0 / x[0]])),
        };
        let r = grad_check(&op, &[-1.0], 1e-4);
        assert!(!r.passed);
        assert!(r.diagnostics.unwrap().contains("non-finite"));
    }
}
