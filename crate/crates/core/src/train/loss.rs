//! Margin loss on capsule lengths and the reconstruction penalty.

use crate::capsule::norm;
use crate::error::{Error, Result};
use crate::matrix::Mat;

pub const UPPER_MARGIN: f64 = 0.9;
pub const LOWER_MARGIN: f64 = 0.1;
pub const DOWN_WEIGHT: f64 = 0.5;

/// `Σ_j t_j max(0, 0.9 − ‖v_j‖)² + 0.5 (1 − t_j) max(0, ‖v_j‖ − 0.1)²`.
pub fn margin_loss(class_vectors: &[Vec<f64>], label: usize) -> f64 {
    class_vectors
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let len = norm(v);
            if j == label {
                (UPPER_MARGIN - len).max(0.0).powi(2)
            } else {
                DOWN_WEIGHT * (len - LOWER_MARGIN).max(0.0).powi(2)
            }
        })
        .sum()
}

/// Gradient of [`margin_loss`] with respect to every class vector.
pub fn margin_loss_grad(class_vectors: &[Vec<f64>], label: usize) -> Vec<Vec<f64>> {
    class_vectors
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let len = norm(v);
            let d_len = if j == label {
                -2.0 * (UPPER_MARGIN - len).max(0.0)
            } else {
                2.0 * DOWN_WEIGHT * (len - LOWER_MARGIN).max(0.0)
            };
            if d_len == 0.0 || len == 0.0 {
                vec![0.0; v.len()]
            } else {
                v.iter().map(|x| d_len * x / len).collect()
            }
        })
        .collect()
}

/// `‖A − Â‖_F` (not squared).
pub fn reconstruction_loss(original: &Mat, reconstructed: &Mat) -> Result<f64> {
    if original.shape() != reconstructed.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction {:?} vs input {:?}",
            reconstructed.shape(),
            original.shape()
        )));
    }
    Ok(original.sub(reconstructed).frobenius())
}

/// Gradient of [`reconstruction_loss`] with respect to `Â`; zero at `Â = A`.
pub fn reconstruction_loss_grad(original: &Mat, reconstructed: &Mat) -> Mat {
    let diff = reconstructed.sub(original);
    let dist = diff.frobenius();
    if dist == 0.0 {
        diff
    } else {
        diff.scale(1.0 / dist)
    }
}

/// Per-graph loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub margin: f64,
    pub reconstruction: f64,
}

/// `(Σ margin + δ Σ reconstruction) / |batch|`.
pub fn total_loss(batch: &[LossTerms], delta: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let margin: f64 = batch.iter().map(|t| t.margin).sum();
    let recon: f64 = batch.iter().map(|t| t.reconstruction).sum();
    Ok((margin + delta * recon) / batch.len() as f64)
}
