//! Cyclic Jacobi eigensolver for small real symmetric matrices.

use crate::error::{Error, Result};
use crate::matrix::Mat;

const MAX_SWEEPS: usize = 64;

/// Eigenvalues in descending order with matching eigenvector columns.
///
/// Each column is sign-canonicalized: its largest-magnitude entry (first
/// one on ties) is positive. With repeated eigenvalues the basis of the
/// shared eigenspace is whatever the solver produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenPair {
    /// `U diag(values) Uᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let k = self.values.len();
        Mat::from_fn(k, k, |i, j| {
            (0..k)
                .map(|r| self.vectors[(i, r)] * self.values[r] * self.vectors[(j, r)])
                .sum()
        })
    }
}

pub fn sym_eigen(x: &Mat) -> Result<EigenPair> {
    if !x.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition of {}x{} matrix",
            x.rows(),
            x.cols()
        )));
    }
    let asym = x.max_asymmetry();
    if asym > 1e-6 {
        return Err(Error::NotSymmetric(asym));
    }
    let n = x.rows();
    let mut a = x.clone();
    a.symmetrize();
    let mut v = Mat::identity(n);

    let scale = a.frobenius();
    let mut converged = scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale * 1e-2 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (c, s) = rotation(a[(p, p)], a[(q, q)], apq);
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].abs())
            .sum();
        if off > 1e-12 * scale.max(1.0) {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    canonicalize_signs(&mut vectors);
    Ok(EigenPair { values, vectors })
}

/// Rotation `(c, s)` that annihilates the off-diagonal entry of
/// `[[app, apq], [apq, aqq]]`.
fn rotation(app: f64, aqq: f64, apq: f64) -> (f64, f64) {
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, t * c)
}

/// `A <- Jᵀ A J`, `V <- V J` for the Givens rotation in the (p, q) plane.
fn rotate(a: &mut Mat, v: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn canonicalize_signs(vectors: &mut Mat) {
    let n = vectors.rows();
    for c in 0..vectors.cols() {
        let mut best = 0;
        for r in 1..n {
            if vectors[(r, c)].abs() > vectors[(best, c)].abs() {
                best = r;
            }
        }
        if vectors[(best, c)] < 0.0 {
            for r in 0..n {
                vectors[(r, c)] = -vectors[(r, c)];
            }
        }
    }
}
