//! Finite-difference gradient checking utilities.
//!
//! These helpers are deliberately independent of the tape: they only see a
//! closure from parameter values to a scalar loss, so the same machinery
//! validates single ops, whole models, or any other differentiable code
//! path. Central differences give O(h^2) truncation error, which with the
//! default step keeps honest implementations well under the 1e-4 relative
//! error band used by the test suites.

/// Default central-difference step.
pub const DEFAULT_H: f64 = 1e-5;

/// Central finite-difference gradient of `f` at `x`.
///
/// `f` is called twice per coordinate on perturbed copies of `x`; `x`
/// itself is left untouched.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work);
        work[i] = orig - h;
        let down = f(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central finite-difference gradient with respect to one named parameter
/// in a list of `(name, values)` pairs. Useful for checking a multi-tensor
/// model one parameter tensor at a time.
pub fn fd_gradient_named<F>(
    mut f: F,
    params: &[(String, Vec<f64>)],
    name: &str,
    h: f64,
) -> Vec<f64>
where
    F: FnMut(&[(String, Vec<f64>)]) -> f64,
{
    let idx = params
        .iter()
        .position(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
    let mut work: Vec<(String, Vec<f64>)> = params.to_vec();
    let n = work[idx].1.len();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let orig = work[idx].1[i];
        work[idx].1[i] = orig + h;
        let up = f(&work);
        work[idx].1[i] = orig - h;
        let down = f(&work);
        work[idx].1[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Norm-based relative error between an analytic and a numeric gradient:
/// `||a - b|| / max(||a||, ||b||, floor)`. The floor keeps the ratio
/// meaningful when both gradients are (near) zero: two tiny gradients
/// compare as equal rather than as a huge relative error.
pub fn norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(a).max(norm(b)).max(1e-8)
}
