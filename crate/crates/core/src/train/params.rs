//! All trainable tensors of the model behind one flat, named view.

use crate::capsule::Mlp;
use crate::iso::TemplateBank;
use crate::matrix::Mat;

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Square tensor constrained to stay symmetric.
    pub symmetric: bool,
}

/// A container of named parameter tensors with a fixed iteration order.
pub trait ParamSet {
    fn specs(&self) -> Vec<TensorSpec>;
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// Restores any structural constraint after an update.
    fn project(&mut self) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub templates: TemplateBank,
    /// `d_m x d_c` routing transform.
    pub routing: Mat,
    /// One MLP per class.
    pub residual: Vec<Mlp>,
    pub decoder: Mlp,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        let mut templates = self.templates.clone();
        templates
            .templates
            .iter_mut()
            .for_each(|t| t.as_mut_slice().fill(0.0));
        Self {
            templates,
            routing: Mat::zeros(self.routing.rows(), self.routing.cols()),
            residual: self.residual.iter().map(Mlp::zeros_like).collect(),
            decoder: self.decoder.zeros_like(),
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn mlp_specs(prefix: &str, mlp: &Mlp, out: &mut Vec<TensorSpec>) {
    for (l, layer) in mlp.layers.iter().enumerate() {
        out.push(TensorSpec {
            name: format!("{prefix}.{l}.weight"),
            rows: layer.weight.rows(),
            cols: layer.weight.cols(),
            symmetric: false,
        });
        out.push(TensorSpec {
            name: format!("{prefix}.{l}.bias"),
            rows: 1,
            cols: layer.bias.len(),
            symmetric: false,
        });
    }
}

impl ParamSet for ModelParams {
    fn specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        for (i, t) in self.templates.templates.iter().enumerate() {
            out.push(TensorSpec {
                name: format!("template.{i}"),
                rows: t.rows(),
                cols: t.cols(),
                symmetric: true,
            });
        }
        out.push(TensorSpec {
            name: "routing".into(),
            rows: self.routing.rows(),
            cols: self.routing.cols(),
            symmetric: false,
        });
        for (j, head) in self.residual.iter().enumerate() {
            mlp_specs(&format!("residual.{j}"), head, &mut out);
        }
        mlp_specs("decoder", &self.decoder, &mut out);
        out
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.templates.templates.iter().map(Mat::as_slice).collect();
        out.push(self.routing.as_slice());
        for mlp in self.residual.iter().chain(std::iter::once(&self.decoder)) {
            for layer in &mlp.layers {
                out.push(layer.weight.as_slice());
                out.push(&layer.bias);
            }
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .templates
            .templates
            .iter_mut()
            .map(Mat::as_mut_slice)
            .collect();
        out.push(self.routing.as_mut_slice());
        for mlp in self
            .residual
            .iter_mut()
            .chain(std::iter::once(&mut self.decoder))
        {
            for layer in &mut mlp.layers {
                out.push(layer.weight.as_mut_slice());
                out.push(&mut layer.bias);
            }
        }
        out
    }

    fn project(&mut self) {
        self.templates.symmetrize();
    }
}
