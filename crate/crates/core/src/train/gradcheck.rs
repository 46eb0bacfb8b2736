//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BrainGraph;
use crate::error::Result;
use crate::train::model::Model;
use crate::train::params::{ModelParams, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per tensor.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative: f64,
    pub mean_relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_relative: f64,
    pub mean_relative: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative < tolerance
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_relative.total_cmp(&b.max_relative))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// Symmetric tensors are probed on their upper triangle along symmetric
/// directions, matching a symmetrized analytic gradient.
pub fn check_gradients<P, F>(
    params: &P,
    analytic: &P,
    loss: F,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let h = options.step;
    let mut tensors = Vec::new();
    let mut all = Vec::new();
    for (t, spec) in params.specs().into_iter().enumerate() {
        let coords: Vec<(usize, usize)> = if spec.symmetric {
            (0..spec.rows)
                .flat_map(|p| (p..spec.cols).map(move |q| (p, q)))
                .collect()
        } else {
            (0..spec.rows)
                .flat_map(|p| (0..spec.cols).map(move |q| (p, q)))
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(t as u64));
        let mut picked: Vec<usize> = if coords.len() <= options.max_coords {
            (0..coords.len()).collect()
        } else {
            sample(&mut rng, coords.len(), options.max_coords).into_vec()
        };
        picked.sort_unstable();

        let mut errors = Vec::with_capacity(picked.len());
        for &c in &picked {
            let (p, q) = coords[c];
            let shifted = |sign: f64| -> Result<f64> {
                let mut probe = params.clone();
                let slice = &mut probe.slices_mut()[t];
                if spec.symmetric && p != q {
                    slice[p * spec.cols + q] += sign * h / 2.0;
                    slice[q * spec.cols + p] += sign * h / 2.0;
                } else {
                    slice[p * spec.cols + q] += sign * h;
                }
                loss(&probe)
            };
            let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
            let ga = analytic.slices()[t][p * spec.cols + q];
            errors.push(relative_error(ga, numeric));
        }
        let max = errors.iter().copied().fold(0.0, f64::max);
        let mean = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        all.extend_from_slice(&errors);
        tensors.push(TensorCheck {
            name: spec.name,
            checked: errors.len(),
            max_relative: max,
            mean_relative: mean,
        });
    }
    let max_relative = all.iter().copied().fold(0.0, f64::max);
    let mean_relative = if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };
    Ok(GradCheckReport {
        tensors,
        max_relative,
        mean_relative,
    })
}

/// Gradient check of the single-graph objective `margin + δ·reconstruction`.
pub fn gradient_check(
    model: &Model,
    graph: &BrainGraph,
    delta: f64,
    options: GradCheckOptions,
) -> Result<GradCheckReport> {
    let fwd = model.forward(graph)?;
    let mut analytic = model.params().zeros_like();
    model.backward(graph, &fwd, delta, 1.0, &mut analytic)?;
    let config = *model.config();
    let loss = |p: &ModelParams| -> Result<f64> {
        let probe = Model::from_params(config, p.clone())?;
        let fwd = probe.forward(graph)?;
        Ok(probe.objective(&fwd, delta))
    };
    check_gradients(model.params(), &analytic, loss, options)
}
