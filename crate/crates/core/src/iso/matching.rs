//! Template-to-region matching: exhaustive search over permutations and
//! the spectral closed form.

use crate::error::{Error, Result};
use crate::iso::eigen::{sym_eigen, EigenPair};
use crate::iso::perm::{enumerate_permutations, Permutation};
use crate::matrix::Mat;

/// Below this distance a match counts as exact and its gradient is zero.
pub const ZERO_DISTANCE: f64 = 1e-9;

fn check_shapes(template: &Mat, region: &Mat) -> Result<usize> {
    if !template.is_square() || template.shape() != region.shape() {
        return Err(Error::ShapeMismatch(format!(
            "template {:?} vs region {:?}",
            template.shape(),
            region.shape()
        )));
    }
    Ok(template.rows())
}

/// Squared distance `‖P K Pᵀ − R‖²` where `R(a, b) = region(a, b)`.
#[inline]
pub(crate) fn permuted_distance_sq(
    template: &Mat,
    perm: &[usize],
    region: impl Fn(usize, usize) -> f64,
) -> f64 {
    let k = perm.len();
    let mut acc = 0.0;
    for (a, &pa) in perm.iter().enumerate() {
        for (b, &pb) in perm.iter().enumerate().take(k) {
            let d = template[(pa, pb)] - region(a, b);
            acc += d * d;
        }
    }
    acc
}

/// Index of the minimizing permutation (first on ties) and the distance.
pub(crate) fn best_permutation(
    template: &Mat,
    perms: &[Permutation],
    region: impl Fn(usize, usize) -> f64 + Copy,
) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (idx, p) in perms.iter().enumerate() {
        let d = permuted_distance_sq(template, &p.0, region);
        if d < best.1 {
            best = (idx, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// `1 − min_P ‖P K Pᵀ − A‖_F` over all `k!` permutation matrices, with the
/// minimizing permutation (lexicographically first on ties).
pub fn match_bruteforce(template: &Mat, region: &Mat) -> Result<(f64, Mat)> {
    check_shapes(template, region)?;
    let perms = enumerate_permutations(template.rows())?;
    let (idx, dist) = best_permutation(template, &perms, |a, b| region[(a, b)]);
    Ok((1.0 - dist, perms[idx].to_matrix()))
}

/// `U2 U1ᵀ` from two canonicalized eigenbases.
pub(crate) fn spectral_alignment(template: &EigenPair, region: &EigenPair) -> Mat {
    region.vectors.matmul(&template.vectors.transpose())
}

/// `‖Λ1 − Λ2‖_F` for eigenvalues sorted the same way.
pub(crate) fn spectrum_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Relaxed matching over orthogonal matrices: the score is
/// `1 − ‖Λ1 − Λ2‖_F` and the alignment is `U2 U1ᵀ` with sign-canonical
/// eigenvectors (the diagonal sign matrix fixed to the identity).
pub fn match_spectral(template: &Mat, region: &Mat) -> Result<(f64, Mat)> {
    check_shapes(template, region)?;
    for m in [template, region] {
        let asym = m.max_asymmetry();
        if asym > 1e-6 {
            return Err(Error::NotSymmetric(asym));
        }
    }
    let et = sym_eigen(template)?;
    let er = sym_eigen(region)?;
    let dist = spectrum_distance_sq(&et.values, &er.values).sqrt();
    Ok((1.0 - dist, spectral_alignment(&et, &er)))
}

/// Symmetric part `(R + Rᵀ)/2` of a region and `‖(R − Rᵀ)/2‖²`.
///
/// Off-diagonal windows of an adjacency matrix are not symmetric. For a
/// symmetric template the skew part is Frobenius-orthogonal to every
/// `P K Pᵀ`, so it adds a constant to the squared distance and the
/// spectral relaxation applies to the symmetric part alone.
pub(crate) fn split_symmetric(region: &Mat) -> (Mat, f64) {
    let k = region.rows();
    let sym = Mat::from_fn(k, k, |a, b| 0.5 * (region[(a, b)] + region[(b, a)]));
    let mut skew_sq = 0.0;
    for a in 0..k {
        for b in 0..k {
            let s = 0.5 * (region[(a, b)] - region[(b, a)]);
            skew_sq += s * s;
        }
    }
    (sym, skew_sq)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_symmetric(k: usize, rng: &mut impl Rng) -> Mat {
        let mut m = Mat::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        m.symmetrize();
        m
    }

    #[test]
    fn exact_match_prefers_identity() {
        let k = Mat::from_rows(&[&[0.0, 0.3, 0.1], &[0.3, 0.0, 0.2], &[0.1, 0.2, 0.5]]);
        let (score, p) = match_bruteforce(&k, &k).unwrap();
        assert_eq!(score, 1.0);
        assert_eq!(p, Mat::identity(3));
    }

    #[test]
    fn swap_found_by_hand_enumeration() {
        // P = I gives distance sqrt(2), P = swap gives 0.
        let k = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let a = Mat::from_rows(&[&[0.0, 0.0], &[0.0, 1.0]]);
        let (score, p) = match_bruteforce(&k, &a).unwrap();
        assert_eq!(score, 1.0);
        assert_eq!(p, Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
    }

    #[test]
    fn zero_region_scores_one_minus_norm() {
        let k = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let (score, p) = match_bruteforce(&k, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(score, 0.0);
        assert_eq!(p, Mat::identity(2));
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            match_bruteforce(&Mat::zeros(2, 2), &Mat::zeros(3, 3)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            match_bruteforce(&Mat::zeros(7, 7), &Mat::zeros(7, 7)),
            Err(Error::KTooLarge(7))
        ));
    }

    #[test]
    fn spectral_diagonal_example() {
        let (score, p) = match_spectral(&Mat::diag(&[2.0, 1.0]), &Mat::diag(&[1.0, 0.0])).unwrap();
        assert!((score - (1.0 - 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(p, Mat::identity(2));
    }

    #[test]
    fn spectral_rejects_asymmetric() {
        let a = Mat::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(
            match_spectral(&Mat::identity(2), &a),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn spectral_never_below_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            for k in [3, 4] {
                let t = random_symmetric(k, &mut rng);
                let a = random_symmetric(k, &mut rng);
                let (bf, _) = match_bruteforce(&t, &a).unwrap();
                let (sp, p) = match_spectral(&t, &a).unwrap();
                assert!(sp >= bf - 1e-12, "spectral {sp} < bruteforce {bf}");
                let gram = p.transpose().matmul(&p);
                assert!(gram.sub(&Mat::identity(k)).frobenius() <= 1e-6);
            }
        }
    }

    #[test]
    fn split_symmetric_is_orthogonal_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_symmetric(3, &mut rng);
        let r = Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let (sym, skew_sq) = split_symmetric(&r);
        for p in enumerate_permutations(3).unwrap() {
            let full = permuted_distance_sq(&t, &p.0, |a, b| r[(a, b)]);
            let split = permuted_distance_sq(&t, &p.0, |a, b| sym[(a, b)]) + skew_sq;
            assert!((full - split).abs() < 1e-12);
        }
    }

    fn sym_strategy(k: usize) -> impl Strategy<Value = Mat> {
        proptest::collection::vec(-1.0f64..1.0, k * k).prop_map(move |v| {
            let mut m = Mat::from_vec(k, k, v);
            m.symmetrize();
            m
        })
    }

    proptest! {
        #[test]
        fn score_is_invariant_to_region_reordering(
            t in sym_strategy(4),
            a in sym_strategy(4),
            q in Just(()).prop_perturb(|_, mut rng| {
                let perms = enumerate_permutations(4).unwrap();
                perms[rng.random_range(0..perms.len())].clone()
            }),
        ) {
            let qm = q.to_matrix();
            let qa = qm.matmul(&a).matmul(&qm.transpose());
            let (s1, _) = match_bruteforce(&t, &a).unwrap();
            let (s2, _) = match_bruteforce(&t, &qa).unwrap();
            // same multiset of distances, so the minimum agrees to rounding
            prop_assert!((s1 - s2).abs() < 1e-12);
        }

        #[test]
        fn permuted_copies_score_one(t in sym_strategy(4), idx in 0usize..24) {
            let q = enumerate_permutations(4).unwrap()[idx].to_matrix();
            let a = q.matmul(&t).matmul(&q.transpose());
            let (bf, p) = match_bruteforce(&t, &a).unwrap();
            let (sp, _) = match_spectral(&t, &a).unwrap();
            prop_assert!((bf - 1.0).abs() < 1e-6);
            prop_assert!((sp - 1.0).abs() < 1e-6);
            for r in 0..4 {
                prop_assert_eq!(p.row(r).iter().filter(|&&v| v == 1.0).count(), 1);
            }
        }
    }
}
