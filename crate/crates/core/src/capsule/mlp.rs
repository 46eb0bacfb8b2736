//! Fully connected layers with cached activations for the backward pass.

use rand::Rng;

use crate::matrix::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// `y = act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Mat::from_fn(outputs, inputs, |_, _| rng.random_range(-limit..=limit));
        Self {
            weight,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Mat::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
            activation: self.activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs plus the final output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("cache holds the input at least")
    }
}

impl Mlp {
    /// Hidden layers use `hidden_activation`, the last layer `output_activation`.
    pub fn glorot(
        sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == sizes.len() {
                    output_activation
                } else {
                    hidden_activation
                };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn forward(&self, input: &[f64]) -> MlpCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let mut y = layer.weight.matvec(x);
            for (v, b) in y.iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
            activations.push(y);
        }
        MlpCache { activations }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut g = grad_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.activations[l];
            let y = &cache.activations[l + 1];
            for (gv, yv) in g.iter_mut().zip(y) {
                *gv *= layer.activation.derivative_from_output(*yv);
            }
            let gl = &mut grads.layers[l];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                gl.bias[o] += go;
                let row = &mut gl.weight.as_mut_slice()[o * x.len()..(o + 1) * x.len()];
                for (w, xv) in row.iter_mut().zip(x) {
                    *w += go * xv;
                }
            }
            g = layer.weight.matvec_t(&g);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn loss(mlp: &Mlp, x: &[f64], w: &[f64]) -> f64 {
        mlp.forward(x)
            .output()
            .iter()
            .zip(w)
            .map(|(a, b)| a * b)
            .sum()
    }

    #[test]
    fn glorot_limits_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::glorot(&[10, 6, 4], Activation::Relu, Activation::Tanh, &mut rng);
        assert_eq!(mlp.layers[0].weight.shape(), (6, 10));
        assert_eq!(mlp.layers[1].activation, Activation::Tanh);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(mlp.layers[0].weight.max_abs() <= limit);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::glorot(&[5, 7, 3], Activation::Relu, Activation::Tanh, &mut rng);
        for l in &mut mlp.layers {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.3 - 0.6).collect();
        let up = [0.5, -1.0, 0.25];
        let mut grads = mlp.zeros_like();
        let gx = mlp.backward(&mlp.forward(&x), &up, &mut grads);
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&mlp, &xp, &up) - loss(&mlp, &xm, &up)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
        for l in 0..2 {
            for e in 0..mlp.layers[l].weight.as_slice().len() {
                let mut p = mlp.clone();
                let mut m = mlp.clone();
                p.layers[l].weight.as_mut_slice()[e] += h;
                m.layers[l].weight.as_mut_slice()[e] -= h;
                let fd = (loss(&p, &x, &up) - loss(&m, &x, &up)) / (2.0 * h);
                assert!((fd - grads.layers[l].weight.as_slice()[e]).abs() < 1e-8);
            }
        }
    }
}
