//! Exhaustive permutation enumeration for the brute-force matcher.

use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Largest template size allowed for exhaustive search (6! = 720).
pub const MAX_BRUTEFORCE_K: usize = 6;

/// A permutation `pi` of `0..k`, read as the matrix with `P(a, pi(a)) = 1`,
/// so that `(P K Pᵀ)(a, b) = K(pi(a), pi(b))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(pub Vec<usize>);

impl Permutation {
    pub fn identity(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_matrix(&self) -> Mat {
        let k = self.len();
        let mut m = Mat::zeros(k, k);
        for (a, &p) in self.0.iter().enumerate() {
            m[(a, p)] = 1.0;
        }
        m
    }

    /// Rearranges the lexicographically next permutation in place; false
    /// once the last one (descending order) has been reached.
    fn advance(&mut self) -> bool {
        let v = &mut self.0;
        if v.len() < 2 {
            return false;
        }
        let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
            return false;
        };
        let j = (i + 1..v.len())
            .rev()
            .find(|&j| v[j] > v[i])
            .expect("pivot has a successor");
        v.swap(i, j);
        v[i + 1..].reverse();
        true
    }
}

/// All `k!` permutations of `0..k` in lexicographic order, identity first.
pub fn enumerate_permutations(k: usize) -> Result<Vec<Permutation>> {
    if k > MAX_BRUTEFORCE_K {
        return Err(Error::KTooLarge(k));
    }
    if k == 0 {
        return Err(Error::ShapeMismatch(
            "template size must be at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity((1..=k).product());
    let mut p = Permutation::identity(k);
    loop {
        out.push(p.clone());
        if !p.advance() {
            break;
        }
    }
    Ok(out)
}
