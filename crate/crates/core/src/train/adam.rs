//! Adam with decoupled weight decay.

use crate::train::params::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates for every tensor of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &impl ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`, then the parameter
    /// constraints are restored.
    pub fn step<P: ParamSet>(
        &mut self,
        params: &mut P,
        grads: &P,
        learning_rate: f64,
        weight_decay: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let tensors = params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.first.iter_mut().zip(&mut self.second));
        for ((theta, g), (m, v)) in tensors {
            for i in 0..theta.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPSILON);
                theta[i] -= learning_rate * (update + weight_decay * theta[i]);
            }
        }
        params.project();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::params::TensorSpec;

    #[derive(Clone, Debug, PartialEq)]
    struct Flat(Vec<f64>);

    impl ParamSet for Flat {
        fn specs(&self) -> Vec<TensorSpec> {
            vec![TensorSpec {
                name: "x".into(),
                rows: 1,
                cols: self.0.len(),
                symmetric: false,
            }]
        }
        fn slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = Flat(vec![0.3, -1.2, 4.0]);
        let before = p.clone();
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            adam.step(&mut p, &Flat(vec![0.0; 3]), 0.01, 0.0);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_sign_like() {
        let mut p = Flat(vec![0.0, 1.0, 2.0]);
        let g = Flat(vec![0.5, -3.0, 1e-3]);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.01, 0.0);
        for (i, (&after, &gi)) in p.0.iter().zip(&g.0).enumerate() {
            let expected = i as f64 - 0.01 * gi / (gi.abs() + EPSILON);
            assert!((after - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut p = Flat(vec![2.0]);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &Flat(vec![0.0]), 0.01, 5e-4);
        assert!((p.0[0] - (2.0 - 0.01 * 5e-4 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_agree() {
        let run = || {
            let mut p = Flat(vec![0.1, 0.2]);
            let mut adam = Adam::new(&p);
            for t in 0..4 {
                adam.step(&mut p, &Flat(vec![t as f64 - 1.5, 0.7]), 0.01, 5e-4);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
