//! Routing-by-agreement from primary capsules to one digit capsule per class.
//!
//! Every primary capsule `m` is mapped by the shared transform to
//! `û = Wᵀ m`. Starting from zero logits, each iteration computes
//! leaky-softmax coefficients, the weighted sum `c̄_j = Σ α_j û`, the
//! squashed capsule `c_j` and the agreement update `β_j += c_jᵀ û`.

use crate::capsule::primary::PrimaryCapsules;
use crate::capsule::squash::{dot, squash, squash_vjp};
use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Softmax over the class logits plus an orphan logit fixed at 0:
/// `α_j = exp(β_j) / (1 + Σ exp(β_j'))`.
pub fn leaky_softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    leaky_softmax_into(logits, &mut out);
    out
}

fn leaky_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(0.0f64, f64::max);
    let orphan = (-max).exp();
    let mut denom = orphan;
    for (o, b) in out.iter_mut().zip(logits) {
        *o = (b - max).exp();
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// Digit capsules with the full routing trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitCapsules {
    /// `c_j` after the final iteration, one row per class.
    pub capsules: Vec<Vec<f64>>,
    /// Logits after the final agreement update, `[class][capsule]`.
    pub logits: Vec<Vec<f64>>,
    /// Coefficients of every iteration, `[iteration][class][capsule]`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub iterations: usize,
    /// Smallest coefficient seen in any iteration.
    pub min_coefficient: f64,
    /// Largest per-capsule total `Σ_j α_j` seen in any iteration.
    pub max_mass: f64,
    predictions: Vec<Vec<f64>>,
    pre_squash: Vec<Vec<Vec<f64>>>,
    per_iteration: Vec<Vec<Vec<f64>>>,
}

/// Gradients of the routing inputs.
#[derive(Debug, Clone)]
pub struct RoutingGrads {
    pub transform: Mat,
    /// Flattened like `PrimaryCapsules::values`.
    pub capsules: Vec<f64>,
}

pub fn dynamic_routing(
    primary: &PrimaryCapsules,
    transform: &Mat,
    classes: usize,
    iterations: usize,
) -> Result<DigitCapsules> {
    if iterations == 0 {
        return Err(Error::BadIterations(iterations));
    }
    if transform.rows() != primary.dim {
        return Err(Error::ShapeMismatch(format!(
            "routing transform has {} rows, capsules have dimension {}",
            transform.rows(),
            primary.dim
        )));
    }
    let n = primary.count();
    let dc = transform.cols();
    let predictions: Vec<Vec<f64>> = (0..n)
        .map(|p| transform.matvec_t(primary.capsule(p)))
        .collect();

    let mut logits = vec![vec![0.0; n]; classes];
    let mut coefficients = Vec::with_capacity(iterations);
    let mut pre_squash = Vec::with_capacity(iterations);
    let mut per_iteration = Vec::with_capacity(iterations);
    let mut min_coefficient = f64::INFINITY;
    let mut max_mass = 0.0f64;

    for _ in 0..iterations {
        let mut alpha = vec![vec![0.0; n]; classes];
        let mut column = vec![0.0; classes];
        let mut a = vec![0.0; classes];
        for p in 0..n {
            for (j, col) in column.iter_mut().enumerate() {
                *col = logits[j][p];
            }
            leaky_softmax_into(&column, &mut a);
            let mut mass = 0.0;
            for (j, &v) in a.iter().enumerate() {
                alpha[j][p] = v;
                min_coefficient = min_coefficient.min(v);
                mass += v;
            }
            max_mass = max_mass.max(mass);
        }
        let mut sums = vec![vec![0.0; dc]; classes];
        for (j, sum) in sums.iter_mut().enumerate() {
            for (p, u) in predictions.iter().enumerate() {
                let w = alpha[j][p];
                for (s, x) in sum.iter_mut().zip(u) {
                    *s += w * x;
                }
            }
        }
        let caps: Vec<Vec<f64>> = sums.iter().map(|s| squash(s)).collect();
        for (j, c) in caps.iter().enumerate() {
            for (p, u) in predictions.iter().enumerate() {
                logits[j][p] += dot(c, u);
            }
        }
        coefficients.push(alpha);
        pre_squash.push(sums);
        per_iteration.push(caps);
    }

    Ok(DigitCapsules {
        capsules: per_iteration
            .last()
            .cloned()
            .expect("at least one iteration"),
        logits,
        coefficients,
        iterations,
        min_coefficient,
        max_mass,
        predictions,
        pre_squash,
        per_iteration,
    })
}

impl DigitCapsules {
    pub fn predictions(&self) -> &[Vec<f64>] {
        &self.predictions
    }

    /// Backpropagates `grad_caps` (one row per class, on the final `c_j`)
    /// through every unrolled iteration, including the coefficients.
    pub fn backward(
        &self,
        primary: &PrimaryCapsules,
        transform: &Mat,
        grad_caps: &[Vec<f64>],
    ) -> RoutingGrads {
        let classes = self.capsules.len();
        let n = self.predictions.len();
        let dc = transform.cols();
        let mut g_logits = vec![vec![0.0; n]; classes];
        // Gradient on û, flattened `[capsule][dc]`.
        let mut g_pred = vec![0.0; n * dc];
        let mut g_alpha = vec![0.0; classes];

        for r in (0..self.iterations).rev() {
            let alpha = &self.coefficients[r];
            let caps = &self.per_iteration[r];
            let mut g_caps: Vec<Vec<f64>> = if r + 1 == self.iterations {
                grad_caps.to_vec()
            } else {
                vec![vec![0.0; dc]; classes]
            };
            if r + 1 < self.iterations {
                // β^{r+1} = β^r + c^r · û
                for j in 0..classes {
                    let (gc, cj) = (&mut g_caps[j], &caps[j]);
                    for (p, (&g, gp)) in g_logits[j]
                        .iter()
                        .zip(g_pred.chunks_exact_mut(dc))
                        .enumerate()
                    {
                        if g == 0.0 {
                            continue;
                        }
                        for ((a, b), (&u, &c)) in gc
                            .iter_mut()
                            .zip(gp.iter_mut())
                            .zip(self.predictions[p].iter().zip(cj))
                        {
                            *a += g * u;
                            *b += g * c;
                        }
                    }
                }
            }
            let g_sums: Vec<Vec<f64>> = (0..classes)
                .map(|j| squash_vjp(&self.pre_squash[r][j], &g_caps[j]))
                .collect();
            // c̄_j = Σ_p α_jp û_p and α = leaky_softmax(β^r)
            for (p, gp) in g_pred.chunks_exact_mut(dc).enumerate() {
                let u = &self.predictions[p];
                let mut weighted = 0.0;
                for j in 0..classes {
                    g_alpha[j] = dot(&g_sums[j], u);
                    let a = alpha[j][p];
                    weighted += a * g_alpha[j];
                    for (g, &s) in gp.iter_mut().zip(&g_sums[j]) {
                        *g += a * s;
                    }
                }
                for j in 0..classes {
                    g_logits[j][p] += alpha[j][p] * (g_alpha[j] - weighted);
                }
            }
        }

        let dm = primary.dim;
        let mut g_transform = Mat::zeros(dm, dc);
        let mut g_capsules = vec![0.0; n * dm];
        let w = transform.as_slice();
        for (p, (g, out)) in g_pred
            .chunks_exact(dc)
            .zip(g_capsules.chunks_exact_mut(dm))
            .enumerate()
        {
            let m = primary.capsule(p);
            let gt = g_transform.as_mut_slice();
            for (a, (&ma, o)) in m.iter().zip(out.iter_mut()).enumerate() {
                let row = &w[a * dc..(a + 1) * dc];
                *o = dot(row, g);
                if ma != 0.0 {
                    for (t, &gq) in gt[a * dc..(a + 1) * dc].iter_mut().zip(g) {
                        *t += ma * gq;
                    }
                }
            }
        }
        RoutingGrads {
            transform: g_transform,
            capsules: g_capsules,
        }
    }
}
