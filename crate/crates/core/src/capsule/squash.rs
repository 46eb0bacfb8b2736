/// `‖x‖² / (1 + ‖x‖²) · x / ‖x‖`, computed as `‖x‖ / (1 + ‖x‖²) · x`
/// so that the zero vector maps to zero without a special case.
pub fn squash(x: &[f64]) -> Vec<f64> {
    let norm = norm(x);
    let scale = norm / (1.0 + norm * norm);
    x.iter().map(|v| v * scale).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::matrix::dot4(a, b)
}

/// Vector-Jacobian product of [`squash`] at `x` against `upstream`.
pub fn squash_vjp(x: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = norm(x);
    let g = n / (1.0 + n * n);
    if n < 1e-12 {
        // Jacobian is ‖x‖ I + x xᵀ/‖x‖ -> 0
        return upstream.iter().map(|u| u * g).collect();
    }
    let dg_over_n = (1.0 - n * n) / (n * (1.0 + n * n) * (1.0 + n * n));
    let proj = dot(x, upstream) * dg_over_n;
    x.iter()
        .zip(upstream)
        .map(|(xi, ui)| g * ui + proj * xi)
        .collect()
}
