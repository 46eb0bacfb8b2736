//! Residual capsules, the combined class vectors, reconstruction and the
//! length-based classification rule.

use crate::capsule::mlp::{Mlp, MlpCache};
use crate::capsule::squash::norm;
use crate::error::{Error, Result};
use crate::iso::IsoFeatures;
use crate::matrix::Mat;

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Residual branch activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ResidualCache {
    /// Concatenated per-channel softmax of the score maps.
    pub normalized: Vec<f64>,
    side_sq: usize,
    per_class: Vec<MlpCache>,
}

/// Each score map goes through a softmax over all its entries; the maps
/// are concatenated and every class has its own MLP onto `d_c`.
pub fn residual_capsules(
    iso: &IsoFeatures,
    heads: &[Mlp],
) -> Result<(Vec<Vec<f64>>, ResidualCache)> {
    let side_sq = iso.side * iso.side;
    let expected = iso.channels() * side_sq;
    if let Some(h) = heads.iter().find(|h| h.inputs() != expected) {
        return Err(Error::ShapeMismatch(format!(
            "residual head expects {} inputs, score maps provide {expected}",
            h.inputs()
        )));
    }
    if iso
        .scores
        .iter()
        .flat_map(|s| s.as_slice())
        .any(|v| !v.is_finite())
    {
        return Err(Error::ShapeMismatch(
            "score maps contain non-finite values".into(),
        ));
    }
    let mut normalized = Vec::with_capacity(expected);
    for s in &iso.scores {
        normalized.extend(softmax(s.as_slice()));
    }
    let per_class: Vec<MlpCache> = heads.iter().map(|h| h.forward(&normalized)).collect();
    let outputs = per_class.iter().map(|c| c.output().to_vec()).collect();
    Ok((
        outputs,
        ResidualCache {
            normalized,
            side_sq,
            per_class,
        },
    ))
}

/// Backward through the residual branch; returns the gradient on the raw
/// score maps, flattened channel by channel.
pub fn residual_backward(
    heads: &[Mlp],
    cache: &ResidualCache,
    grad_out: &[Vec<f64>],
    grads: &mut [Mlp],
) -> Vec<f64> {
    let mut g_norm = vec![0.0; cache.normalized.len()];
    for ((head, c), (g, acc)) in heads
        .iter()
        .zip(&cache.per_class)
        .zip(grad_out.iter().zip(grads.iter_mut()))
    {
        let gi = head.backward(c, g, acc);
        for (a, b) in g_norm.iter_mut().zip(gi) {
            *a += b;
        }
    }
    let mut g_scores = vec![0.0; g_norm.len()];
    for (chunk, (z, gz)) in g_scores.chunks_mut(cache.side_sq).zip(
        cache
            .normalized
            .chunks(cache.side_sq)
            .zip(g_norm.chunks(cache.side_sq)),
    ) {
        let weighted: f64 = z.iter().zip(gz).map(|(a, b)| a * b).sum();
        for ((o, zi), gi) in chunk.iter_mut().zip(z).zip(gz) {
            *o = zi * (gi - weighted);
        }
    }
    g_scores
}

/// `v_j = r_j + c_j`.
pub fn combine_heads(digit: &[Vec<f64>], residual: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if digit.len() != residual.len() || digit.iter().zip(residual).any(|(c, r)| c.len() != r.len())
    {
        return Err(Error::ShapeMismatch(
            "digit and residual capsules differ in shape".into(),
        ));
    }
    Ok(digit
        .iter()
        .zip(residual)
        .map(|(c, r)| c.iter().zip(r).map(|(a, b)| a + b).collect())
        .collect())
}

/// Decodes the concatenated class vectors into an `n x n` matrix (row-major
/// reshape of the tanh output layer, not symmetrized).
pub fn reconstruct(class_vectors: &[Vec<f64>], decoder: &Mlp, n: usize) -> Result<(Mat, MlpCache)> {
    let input: Vec<f64> = class_vectors.concat();
    if input.len() != decoder.inputs() || decoder.outputs() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "decoder maps {} -> {}, got {} inputs for a {n}x{n} output",
            decoder.inputs(),
            decoder.outputs(),
            input.len()
        )));
    }
    let cache = decoder.forward(&input);
    Ok((Mat::from_vec(n, n, cache.output().to_vec()), cache))
}

/// Predicted label (longest class vector, lowest index on ties) and all lengths.
pub fn classify(class_vectors: &[Vec<f64>]) -> (usize, Vec<f64>) {
    let lengths: Vec<f64> = class_vectors.iter().map(|v| norm(v)).collect();
    let mut best = 0;
    for (j, &l) in lengths.iter().enumerate().skip(1) {
        if l > lengths[best] {
            best = j;
        }
    }
    (best, lengths)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::capsule::mlp::Activation;
    use crate::data::BrainGraph;
    use crate::iso::{extract_features, MatchMode, TemplateBank};

    fn iso(n: usize, k: usize, c: usize, seed: u64) -> IsoFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = TemplateBank::random(c, k, &mut rng);
        let mut a = Mat::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        a.symmetrize();
        extract_features(
            &BrainGraph::new("g", 0, a).unwrap(),
            &bank,
            MatchMode::Bruteforce,
        )
        .unwrap()
    }

    #[test]
    fn constant_scores_give_uniform_softmax() {
        let mut f = iso(6, 3, 2, 1);
        for s in &mut f.scores {
            s.as_mut_slice().fill(0.37);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let heads: Vec<Mlp> = (0..2)
            .map(|_| {
                Mlp::glorot(
                    &[32, 64, 9],
                    Activation::Relu,
                    Activation::Identity,
                    &mut rng,
                )
            })
            .collect();
        let (out, cache) = residual_capsules(&f, &heads).unwrap();
        assert!(cache
            .normalized
            .iter()
            .all(|&z| (z - 1.0 / 16.0).abs() < 1e-15));
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|r| r.len() == 9));
    }

    #[test]
    fn zero_heads_give_zero_residuals() {
        let f = iso(6, 3, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let heads: Vec<Mlp> = (0..2)
            .map(|_| {
                Mlp::glorot(
                    &[16, 64, 9],
                    Activation::Relu,
                    Activation::Identity,
                    &mut rng,
                )
                .zeros_like()
            })
            .collect();
        let (out, _) = residual_capsules(&f, &heads).unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.0));
        let wrong: Vec<Mlp> = vec![Mlp::glorot(
            &[15, 4, 9],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )];
        assert!(residual_capsules(&f, &wrong).is_err());
    }

    #[allow(clippy::needless_range_loop)]
    #[test]
    fn residual_backward_matches_finite_differences() {
        let f = iso(6, 3, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let heads: Vec<Mlp> = (0..2)
            .map(|_| {
                Mlp::glorot(
                    &[32, 8, 3],
                    Activation::Relu,
                    Activation::Identity,
                    &mut rng,
                )
            })
            .collect();
        let up = vec![vec![0.2, -0.5, 0.9], vec![1.0, 0.3, -0.2]];
        let objective = |f: &IsoFeatures| -> f64 {
            let (out, _) = residual_capsules(f, &heads).unwrap();
            out.iter()
                .zip(&up)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .sum()
        };
        let (_, cache) = residual_capsules(&f, &heads).unwrap();
        let mut grads: Vec<Mlp> = heads.iter().map(Mlp::zeros_like).collect();
        let g = residual_backward(&heads, &cache, &up, &mut grads);
        let h = 1e-6;
        for e in 0..32 {
            let (ch, idx) = (e / 16, e % 16);
            let mut p = f.clone();
            let mut m = f.clone();
            p.scores[ch].as_mut_slice()[idx] += h;
            m.scores[ch].as_mut_slice()[idx] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!((fd - g[e]).abs() < 1e-8, "entry {e}: {fd} vs {}", g[e]);
        }
    }

    #[test]
    fn combine_examples() {
        let c = vec![vec![0.1, 0.2], vec![0.0, 0.3]];
        let z = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(combine_heads(&c, &z).unwrap(), c);
        assert_eq!(combine_heads(&z, &c).unwrap(), c);
        assert!(combine_heads(&c, &[vec![0.0]]).is_err());
        let (label, lengths) = classify(&combine_heads(&z, &z).unwrap());
        assert_eq!(label, 0);
        assert_eq!(lengths, vec![0.0, 0.0]);
    }

    #[test]
    fn classify_examples() {
        let (label, lengths) = classify(&[vec![0.2, 0.0], vec![0.0, 0.8]]);
        assert_eq!(label, 1);
        assert!((lengths[0] - 0.2).abs() < 1e-15 && (lengths[1] - 0.8).abs() < 1e-15);
        assert_eq!(classify(&[vec![0.5], vec![-0.5]]).0, 0);
    }

    #[test]
    fn reconstruction_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dec = Mlp::glorot(
            &[4, 128, 256, 25],
            Activation::Relu,
            Activation::Tanh,
            &mut rng,
        );
        let v = vec![vec![3.0, -2.0], vec![10.0, 0.5]];
        let (a, _) = reconstruct(&v, &dec, 5).unwrap();
        assert_eq!(a.shape(), (5, 5));
        assert!(a.as_slice().iter().all(|x| x.abs() < 1.0));
        assert!(reconstruct(&v, &dec, 4).is_err());

        let mut zero = dec.zeros_like();
        zero.layers[2].bias.iter_mut().for_each(|b| *b = 0.3);
        let (a, _) = reconstruct(&v, &zero, 5).unwrap();
        assert!(a.as_slice().iter().all(|&x| x == 0.3f64.tanh()));
    }
}
