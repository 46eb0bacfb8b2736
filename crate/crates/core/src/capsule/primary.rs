use crate::error::{Error, Result};
use crate::iso::IsoFeatures;

/// Values with smaller magnitude are replaced by the padding constant.
pub const PAD_THRESHOLD: f64 = 1e-9;

/// How the capsule direction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// Normalized optimal alignment of the window.
    #[default]
    Alignment,
    /// One fixed unit vector for every window: only the score survives.
    LengthOnly,
}

/// Primary capsule tensor of shape `c x side x side x d_m`, flattened with
/// capsule index `(i * side + s) * side + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryCapsules {
    pub values: Vec<f64>,
    /// Unit direction of each capsule before scaling by the score.
    directions: Vec<f64>,
    /// Entries replaced by `gamma`.
    padded: Vec<bool>,
    pub gamma: f64,
    pub dim: usize,
    pub channels: usize,
    pub side: usize,
}

impl PrimaryCapsules {
    pub fn count(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn capsule(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn at(&self, i: usize, s: usize, t: usize) -> &[f64] {
        self.capsule((i * self.side + s) * self.side + t)
    }

    pub fn is_padded(&self, idx: usize, a: usize) -> bool {
        self.padded[idx * self.dim + a]
    }

    /// Pulls a gradient on the capsule values back onto the score maps
    /// (flattened like the capsules). Padded entries are constants.
    pub fn backward_scores(&self, grad_values: &[f64]) -> Vec<f64> {
        (0..self.count())
            .map(|idx| {
                let r = idx * self.dim..(idx + 1) * self.dim;
                r.filter(|&e| !self.padded[e])
                    .map(|e| grad_values[e] * self.directions[e])
                    .sum()
            })
            .collect()
    }
}

/// Capsule `(i, s, t)` is `p / ‖p‖ · F_i(s, t)` for the flattened alignment
/// `p`, then every entry below [`PAD_THRESHOLD`] in magnitude becomes `gamma`.
pub fn build_primary_capsules(iso: &IsoFeatures, gamma: f64) -> Result<PrimaryCapsules> {
    build_primary_capsules_with(iso, gamma, Orientation::Alignment)
}

pub fn build_primary_capsules_with(
    iso: &IsoFeatures,
    gamma: f64,
    orientation: Orientation,
) -> Result<PrimaryCapsules> {
    if !(-1.0..=1.0).contains(&gamma) {
        return Err(Error::BadGamma(gamma));
    }
    let dim = iso.k * iso.k;
    let (c, side) = (iso.channels(), iso.side);
    let total = c * side * side * dim;
    let mut values = Vec::with_capacity(total);
    let mut directions = Vec::with_capacity(total);
    let mut padded = Vec::with_capacity(total);
    let constant = 1.0 / (dim as f64).sqrt();
    for i in 0..c {
        for s in 0..side {
            for t in 0..side {
                let score = iso.scores[i][(s, t)];
                let start = directions.len();
                match orientation {
                    Orientation::Alignment => {
                        let p = iso.perm_vector(i, s, t);
                        let len = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                        directions.extend(p.iter().map(|v| v / len));
                    }
                    Orientation::LengthOnly => {
                        directions.extend(std::iter::repeat_n(constant, dim))
                    }
                }
                for &d in &directions[start..] {
                    let v = d * score;
                    let pad = v.abs() < PAD_THRESHOLD;
                    padded.push(pad);
                    values.push(if pad { gamma } else { v });
                }
            }
        }
    }
    Ok(PrimaryCapsules {
        values,
        directions,
        padded,
        gamma,
        dim,
        channels: c,
        side,
    })
}

#[cfg(test)]
impl PrimaryCapsules {
    /// One channel, `values.len() / dim` capsules, nothing padded.
    pub(crate) fn from_raw(values: Vec<f64>, dim: usize) -> Self {
        let count = values.len() / dim;
        Self {
            directions: values.clone(),
            padded: vec![false; values.len()],
            values,
            gamma: 0.0,
            dim,
            channels: count,
            side: 1,
        }
    }
}
