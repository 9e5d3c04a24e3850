//! Real roots of dense univariate polynomials via the companion matrix.

use nalgebra::DMatrix;

/// Scale-aware reality test for companion-matrix eigenvalues.
const IMAG_TOL: f64 = 1e-8;

/// Evaluates a polynomial with ascending coefficients at `z`.
pub fn eval_poly(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// Derivative coefficients (ascending order).
fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Real roots of the polynomial `Σ coeffs[k]·zᵏ`.
///
/// Negligible leading coefficients are trimmed before building the companion
/// matrix, eigenvalues with `|Im| < 1e-8·(1 + |Re|)` are accepted as real, and
/// each accepted root is polished with a few Newton steps on the original
/// polynomial. Returns `None` when the polynomial is identically negligible.
pub fn real_roots(coeffs: &[f64]) -> Option<Vec<f64>> {
    let max_abs = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_abs <= 0.0 || !max_abs.is_finite() {
        return None;
    }
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].abs() <= 1e-13 * max_abs {
        degree -= 1;
    }
    if degree == 0 {
        // Nonzero constant: no roots.
        return Some(Vec::new());
    }

    let lead = coeffs[degree];
    let n = degree;
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        companion[(i, n - 1)] = -coeffs[i] / lead;
    }
    let eigen = companion.complex_eigenvalues();

    let deriv = derivative(&coeffs[..=degree]);
    let mut out = Vec::new();
    for ev in eigen.iter() {
        if ev.im.abs() >= IMAG_TOL * (1.0 + ev.re.abs()) {
            continue;
        }
        let mut z = ev.re;
        for _ in 0..8 {
            let f = eval_poly(&coeffs[..=degree], z);
            let df = eval_poly(&deriv, z);
            if df.abs() < 1e-300 {
                break;
            }
            let step = f / df;
            z -= step;
            if step.abs() < 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        out.push(z);
    }
    Some(out)
}
