//! The full network: template matching, primary capsules, routing, the
//! residual heads and the reconstruction decoder, with the backward pass.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::capsule::{
    build_primary_capsules_with, classify, dynamic_routing, reconstruct, residual_backward,
    residual_capsules, Activation, DigitCapsules, Mlp, MlpCache, Orientation, PrimaryCapsules,
    ResidualCache, DECODER_HIDDEN, NUM_CLASSES, RESIDUAL_HIDDEN,
};
use crate::data::BrainGraph;
use crate::error::{Error, Result};
use crate::iso::{
    extract_features, grad_scores_wrt_templates, IsoFeatures, MatchMode, TemplateBank,
    MAX_BRUTEFORCE_K,
};
use crate::matrix::Mat;
use crate::train::loss::{
    margin_loss, margin_loss_grad, reconstruction_loss, reconstruction_loss_grad, LossTerms,
};
use crate::train::params::ModelParams;

/// Model variants used for comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Capsule directions replaced by a constant unit vector.
    LengthOnly,
    /// Class vectors come from routing alone.
    NoResidual,
    /// Reconstruction term dropped from the training objective.
    NoRecon,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::LengthOnly => "length-only",
            Ablation::NoResidual => "no-residual",
            Ablation::NoRecon => "no-recon",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "length-only" => Ok(Ablation::LengthOnly),
            "no-residual" => Ok(Ablation::NoResidual),
            "no-recon" => Ok(Ablation::NoRecon),
            other => Err(Error::BadConfig(format!("unknown ablation `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Node count of the input graphs.
    pub n: usize,
    pub k: usize,
    pub channels: usize,
    /// Class capsule dimension `d_c`.
    pub capsule_dim: usize,
    pub gamma: f64,
    pub routing_iterations: usize,
    pub match_mode: MatchMode,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < self.k {
            return Err(Error::GraphTooSmall {
                n: self.n,
                k: self.k,
            });
        }
        if self.match_mode == MatchMode::Bruteforce && self.k > MAX_BRUTEFORCE_K {
            return Err(Error::KTooLarge(self.k));
        }
        if self.channels == 0 || self.capsule_dim == 0 {
            return Err(Error::BadConfig(
                "channel count and capsule dimension must be positive".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(Error::BadGamma(self.gamma));
        }
        if self.routing_iterations == 0 {
            return Err(Error::BadIterations(0));
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        self.n - self.k + 1
    }

    fn orientation(&self) -> Orientation {
        match self.ablation {
            Ablation::LengthOnly => Orientation::LengthOnly,
            _ => Orientation::Alignment,
        }
    }

    /// Freshly initialized parameters: uniform templates, Glorot elsewhere.
    pub fn init_params(&self, rng: &mut impl Rng) -> Result<ModelParams> {
        self.validate()?;
        let templates = TemplateBank::random(self.channels, self.k, rng);
        let dm = self.k * self.k;
        let bound = (6.0 / (dm + self.capsule_dim) as f64).sqrt();
        let routing = Mat::from_fn(dm, self.capsule_dim, |_, _| rng.random_range(-bound..bound));
        let features = self.channels * self.side() * self.side();
        let residual = (0..NUM_CLASSES)
            .map(|_| {
                Mlp::glorot(
                    &[features, RESIDUAL_HIDDEN, self.capsule_dim],
                    Activation::Relu,
                    Activation::Identity,
                    rng,
                )
            })
            .collect();
        let decoder = Mlp::glorot(
            &[
                NUM_CLASSES * self.capsule_dim,
                DECODER_HIDDEN[0],
                DECODER_HIDDEN[1],
                self.n * self.n,
            ],
            Activation::Relu,
            Activation::Tanh,
            rng,
        );
        Ok(ModelParams {
            templates,
            routing,
            residual,
            decoder,
        })
    }
}

/// Activations of one graph, tied to the parameter version that produced them.
#[derive(Debug, Clone)]
pub struct Forward {
    version: u64,
    pub iso: IsoFeatures,
    pub primary: PrimaryCapsules,
    pub digit: DigitCapsules,
    residual: Option<ResidualCache>,
    pub class_vectors: Vec<Vec<f64>>,
    pub reconstruction: Mat,
    decoder_cache: MlpCache,
    pub prediction: usize,
    pub lengths: Vec<f64>,
    pub loss: LossTerms,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    version: u64,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let params = config.init_params(rng)?;
        Ok(Self {
            config,
            params,
            version: 0,
        })
    }

    /// Wraps existing parameters after checking them against the architecture.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        use crate::train::params::ParamSet;
        use rand::SeedableRng;
        let reference = config.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        let (want, got) = (reference.specs(), params.specs());
        if want != got {
            return Err(Error::ShapeMismatch(
                "parameters do not match the model configuration".into(),
            ));
        }
        let acts = |p: &ModelParams| -> Vec<Activation> {
            p.residual
                .iter()
                .chain([&p.decoder])
                .flat_map(|m| m.layers.iter().map(|l| l.activation))
                .collect()
        };
        if acts(&reference) != acts(&params) {
            return Err(Error::ShapeMismatch(
                "layer activations do not match the architecture".into(),
            ));
        }
        Ok(Self {
            config,
            params,
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Mutates the parameters; activations computed earlier become stale.
    pub fn update(&mut self, f: impl FnOnce(&mut ModelParams)) {
        f(&mut self.params);
        self.version += 1;
    }

    pub fn forward(&self, graph: &BrainGraph) -> Result<Forward> {
        let cfg = &self.config;
        if graph.n() != cfg.n {
            return Err(Error::ShapeMismatch(format!(
                "graph `{}` has {} nodes, model expects {}",
                graph.id,
                graph.n(),
                cfg.n
            )));
        }
        let p = &self.params;
        let iso = extract_features(graph, &p.templates, cfg.match_mode)?;
        let primary = build_primary_capsules_with(&iso, cfg.gamma, cfg.orientation())?;
        let digit = dynamic_routing(&primary, &p.routing, NUM_CLASSES, cfg.routing_iterations)?;
        let (class_vectors, residual) = if cfg.ablation == Ablation::NoResidual {
            (digit.capsules.clone(), None)
        } else {
            let (r, cache) = residual_capsules(&iso, &p.residual)?;
            (
                crate::capsule::combine_heads(&digit.capsules, &r)?,
                Some(cache),
            )
        };
        let (reconstruction, decoder_cache) = reconstruct(&class_vectors, &p.decoder, cfg.n)?;
        let (prediction, lengths) = classify(&class_vectors);
        let loss = LossTerms {
            margin: margin_loss(&class_vectors, graph.label),
            reconstruction: reconstruction_loss(&graph.adjacency, &reconstruction)?,
        };
        Ok(Forward {
            version: self.version,
            iso,
            primary,
            digit,
            residual,
            class_vectors,
            reconstruction,
            decoder_cache,
            prediction,
            lengths,
            loss,
        })
    }

    /// Weight of the reconstruction term in the training objective.
    pub fn recon_weight(&self, delta: f64) -> f64 {
        if self.config.ablation == Ablation::NoRecon {
            0.0
        } else {
            delta
        }
    }

    /// Objective of one graph: `margin + δ · reconstruction` (δ ignored under
    /// the no-recon ablation).
    pub fn objective(&self, fwd: &Forward, delta: f64) -> f64 {
        fwd.loss.margin + self.recon_weight(delta) * fwd.loss.reconstruction
    }

    /// Accumulates `scale · ∂(margin + δ·reconstruction)/∂θ` into `grads`.
    pub fn backward(
        &self,
        graph: &BrainGraph,
        fwd: &Forward,
        delta: f64,
        scale: f64,
        grads: &mut ModelParams,
    ) -> Result<()> {
        if fwd.version != self.version {
            return Err(Error::StaleActivations {
                cached: fwd.version,
                current: self.version,
            });
        }
        let cfg = &self.config;
        let p = &self.params;

        let mut g_v = margin_loss_grad(&fwd.class_vectors, graph.label);
        g_v.iter_mut().flatten().for_each(|g| *g *= scale);
        let recon_scale = scale * self.recon_weight(delta);
        if recon_scale != 0.0 {
            let g_rec =
                reconstruction_loss_grad(&graph.adjacency, &fwd.reconstruction).scale(recon_scale);
            let g_in = p
                .decoder
                .backward(&fwd.decoder_cache, g_rec.as_slice(), &mut grads.decoder);
            for (gv, chunk) in g_v.iter_mut().zip(g_in.chunks(cfg.capsule_dim)) {
                for (a, b) in gv.iter_mut().zip(chunk) {
                    *a += b;
                }
            }
        }

        let side_sq = fwd.iso.side * fwd.iso.side;
        let routed = fwd.digit.backward(&fwd.primary, &p.routing, &g_v);
        grads.routing.add_assign_scaled(&routed.transform, 1.0);
        let mut g_scores = fwd.primary.backward_scores(&routed.capsules);
        if let Some(cache) = &fwd.residual {
            let g_res = residual_backward(&p.residual, cache, &g_v, &mut grads.residual);
            for (a, b) in g_scores.iter_mut().zip(g_res) {
                *a += b;
            }
        }
        let upstream: Vec<Mat> = g_scores
            .chunks(side_sq)
            .map(|c| Mat::from_vec(fwd.iso.side, fwd.iso.side, c.to_vec()))
            .collect();
        let g_templates = grad_scores_wrt_templates(graph, &p.templates, &fwd.iso, &upstream)?;
        for (acc, g) in grads.templates.templates.iter_mut().zip(&g_templates) {
            acc.add_assign_scaled(g, 1.0);
        }
        Ok(())
    }
}
