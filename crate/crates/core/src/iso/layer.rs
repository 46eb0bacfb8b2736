//! Sliding-window isomorphic feature extraction over a whole graph.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::data::BrainGraph;
use crate::error::{Error, Result};
use crate::iso::eigen::{sym_eigen, EigenPair};
use crate::iso::matching::{
    best_permutation, spectral_alignment, spectrum_distance_sq, split_symmetric, ZERO_DISTANCE,
};
use crate::iso::perm::{enumerate_permutations, Permutation};
use crate::matrix::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    /// Exact minimum over all `k!` permutations.
    #[default]
    Bruteforce,
    /// Eigendecomposition closed form over orthogonal matrices.
    Spectral,
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Bruteforce => "bruteforce",
            MatchMode::Spectral => "spectral",
        })
    }
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bruteforce" => Ok(MatchMode::Bruteforce),
            "spectral" => Ok(MatchMode::Spectral),
            other => Err(Error::BadConfig(format!("unknown match mode `{other}`"))),
        }
    }
}

/// The `c` learnable `k x k` sub-graph templates.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    pub templates: Vec<Mat>,
    k: usize,
}

impl TemplateBank {
    pub fn new(templates: Vec<Mat>) -> Result<Self> {
        let k = templates.first().map(Mat::rows).ok_or_else(|| {
            Error::ShapeMismatch("template bank needs at least one template".into())
        })?;
        if let Some(t) = templates.iter().find(|t| t.shape() != (k, k)) {
            return Err(Error::ShapeMismatch(format!(
                "template {:?} in a bank of size {k}",
                t.shape()
            )));
        }
        Ok(Self { templates, k })
    }

    /// Entries uniform in [-0.5, 0.5], then symmetrized.
    pub fn random(c: usize, k: usize, rng: &mut impl Rng) -> Self {
        let templates = (0..c)
            .map(|_| {
                let mut t = Mat::from_fn(k, k, |_, _| rng.random_range(-0.5..=0.5));
                t.symmetrize();
                t
            })
            .collect();
        Self { templates, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.templates.len()
    }

    pub fn symmetrize(&mut self) {
        self.templates.iter_mut().for_each(Mat::symmetrize);
    }

    /// Writes `template <i> k=<k>` followed by the k rows of each template.
    pub fn export(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (i, t) in self.templates.iter().enumerate() {
            writeln!(out, "template {i} k={}", self.k)?;
            for r in 0..self.k {
                let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:.9}")).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn parse_export(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: &str| Error::MalformedFile {
            line: line + 1,
            reason: reason.into(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let mut templates = Vec::new();
        while let Some((ln, header)) = lines.next() {
            let parts: Vec<&str> = header.split_whitespace().collect();
            let k = match parts.as_slice() {
                ["template", idx, k] if idx.parse::<usize>() == Ok(templates.len()) => k
                    .strip_prefix("k=")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| bad(ln, "bad k in template header"))?,
                _ => return Err(bad(ln, "expected `template <i> k=<k>`")),
            };
            let mut data = Vec::with_capacity(k * k);
            for _ in 0..k {
                let (ln, row) = lines.next().ok_or_else(|| bad(ln, "template truncated"))?;
                let values: std::result::Result<Vec<f64>, _> =
                    row.split_whitespace().map(str::parse::<f64>).collect();
                let values = values.map_err(|_| bad(ln, "non-numeric template entry"))?;
                if values.len() != k {
                    return Err(bad(ln, "template row has the wrong length"));
                }
                data.extend(values);
            }
            templates.push(Mat::from_vec(k, k, data));
        }
        TemplateBank::new(templates)
    }
}

/// What the backward pass needs to differentiate one window.
#[derive(Debug, Clone, PartialEq)]
enum MatchTrace {
    /// Index into the lexicographic permutation list, per channel and window.
    Bruteforce { perm_index: Vec<Vec<usize>> },
    /// Template eigenpairs per channel, region spectra and skew norms per window.
    Spectral {
        template_eigen: Vec<EigenPair>,
        region_values: Vec<Vec<f64>>,
        skew_sq: Vec<f64>,
    },
}

/// Per-template score matrices and optimal-alignment tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoFeatures {
    pub mode: MatchMode,
    pub k: usize,
    /// `n − k + 1`.
    pub side: usize,
    /// One `side x side` matrix per channel.
    pub scores: Vec<Mat>,
    /// One flattened `side x side x k²` tensor per channel.
    pub perms: Vec<Vec<f64>>,
    trace: MatchTrace,
}

impl IsoFeatures {
    pub fn channels(&self) -> usize {
        self.scores.len()
    }

    /// Row-major `k x k` alignment matrix of window `(s, t)` in channel `i`.
    pub fn perm_vector(&self, i: usize, s: usize, t: usize) -> &[f64] {
        let kk = self.k * self.k;
        let w = s * self.side + t;
        &self.perms[i][w * kk..(w + 1) * kk]
    }

    pub fn perm_matrix(&self, i: usize, s: usize, t: usize) -> Mat {
        Mat::from_vec(self.k, self.k, self.perm_vector(i, s, t).to_vec())
    }
}

/// Matches every template against every `k x k` window `A(s.., t..)`.
pub fn extract_features(
    graph: &BrainGraph,
    bank: &TemplateBank,
    mode: MatchMode,
) -> Result<IsoFeatures> {
    let a = &graph.adjacency;
    let (n, k) = (a.rows(), bank.k());
    if n < k {
        return Err(Error::GraphTooSmall { n, k });
    }
    let side = n - k + 1;
    let kk = k * k;
    let c = bank.channels();
    let mut scores = vec![Mat::zeros(side, side); c];
    let mut perms = vec![vec![0.0; side * side * kk]; c];

    let trace = match mode {
        MatchMode::Bruteforce => {
            let all = enumerate_permutations(k)?;
            let mut perm_index = vec![vec![0; side * side]; c];
            for (i, template) in bank.templates.iter().enumerate() {
                for s in 0..side {
                    for t in 0..side {
                        let (idx, dist) =
                            best_permutation(template, &all, |r, q| a[(s + r, t + q)]);
                        let w = s * side + t;
                        scores[i][(s, t)] = 1.0 - dist;
                        perm_index[i][w] = idx;
                        write_perm(&mut perms[i][w * kk..(w + 1) * kk], &all[idx]);
                    }
                }
            }
            MatchTrace::Bruteforce { perm_index }
        }
        MatchMode::Spectral => {
            let template_eigen = bank
                .templates
                .iter()
                .map(|t| {
                    let asym = t.max_asymmetry();
                    if asym > 1e-6 {
                        return Err(Error::NotSymmetric(asym));
                    }
                    sym_eigen(t)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut region_values = Vec::with_capacity(side * side);
            let mut skew = Vec::with_capacity(side * side);
            for s in 0..side {
                for t in 0..side {
                    let (sym, skew_sq) = split_symmetric(&a.block(s, t, k));
                    let er = sym_eigen(&sym)?;
                    let w = s * side + t;
                    for (i, et) in template_eigen.iter().enumerate() {
                        let dist = (spectrum_distance_sq(&et.values, &er.values) + skew_sq).sqrt();
                        scores[i][(s, t)] = 1.0 - dist;
                        let p = spectral_alignment(et, &er);
                        perms[i][w * kk..(w + 1) * kk].copy_from_slice(p.as_slice());
                    }
                    region_values.push(er.values);
                    skew.push(skew_sq);
                }
            }
            MatchTrace::Spectral {
                template_eigen,
                region_values,
                skew_sq: skew,
            }
        }
    };
    Ok(IsoFeatures {
        mode,
        k,
        side,
        scores,
        perms,
        trace,
    })
}

fn write_perm(dst: &mut [f64], p: &Permutation) {
    let k = p.len();
    dst.fill(0.0);
    for (a, &pa) in p.0.iter().enumerate() {
        dst[a * k + pa] = 1.0;
    }
}

/// Gradient of `Σ upstream(i,s,t) · F_i(s,t)` with respect to each template.
///
/// The optimal alignment is held fixed. Brute force: `∂F/∂K = −Pᵀ D P / ‖D‖`
/// with `D = P K Pᵀ − A_st`. Spectral: only eigenvalues are differentiated,
/// `∂F/∂K = −Σ_r (α_r − β_r) u_r u_rᵀ / dist`. Windows closer than
/// [`ZERO_DISTANCE`] contribute nothing. The result is symmetrized.
pub fn grad_scores_wrt_templates(
    graph: &BrainGraph,
    bank: &TemplateBank,
    iso: &IsoFeatures,
    upstream: &[Mat],
) -> Result<Vec<Mat>> {
    let c = bank.channels();
    if upstream.len() != c || upstream.iter().any(|u| u.shape() != (iso.side, iso.side)) {
        return Err(Error::ShapeMismatch(
            "upstream gradient does not match the score maps".into(),
        ));
    }
    if iso.channels() != c || iso.k != bank.k() || graph.n() + 1 != iso.side + iso.k {
        return Err(Error::ShapeMismatch(
            "features were not produced from this graph and bank".into(),
        ));
    }
    let k = iso.k;
    let a = &graph.adjacency;
    let side = iso.side;
    let mut grads = vec![Mat::zeros(k, k); c];

    match &iso.trace {
        MatchTrace::Bruteforce { perm_index } => {
            let all = enumerate_permutations(k)?;
            for (i, template) in bank.templates.iter().enumerate() {
                let g = &mut grads[i];
                for s in 0..side {
                    for t in 0..side {
                        let up = upstream[i][(s, t)];
                        if up == 0.0 {
                            continue;
                        }
                        let perm = &all[perm_index[i][s * side + t]].0;
                        let dist = 1.0 - iso.scores[i][(s, t)];
                        if dist < ZERO_DISTANCE {
                            continue;
                        }
                        // (Pᵀ D P)(pa, pb) = D(a, b)
                        let coef = -up / dist;
                        for (ra, &pa) in perm.iter().enumerate() {
                            for (rb, &pb) in perm.iter().enumerate() {
                                let d = template[(pa, pb)] - a[(s + ra, t + rb)];
                                g[(pa, pb)] += coef * d;
                            }
                        }
                    }
                }
            }
        }
        MatchTrace::Spectral {
            template_eigen,
            region_values,
            ..
        } => {
            for (i, et) in template_eigen.iter().enumerate() {
                // weight per eigenvalue, accumulated over windows first
                let mut weights = vec![0.0; k];
                for s in 0..side {
                    for t in 0..side {
                        let up = upstream[i][(s, t)];
                        let dist = 1.0 - iso.scores[i][(s, t)];
                        if up == 0.0 || dist < ZERO_DISTANCE {
                            continue;
                        }
                        let beta = &region_values[s * side + t];
                        for r in 0..k {
                            weights[r] -= up * (et.values[r] - beta[r]) / dist;
                        }
                    }
                }
                let g = &mut grads[i];
                for (r, w) in weights.iter().enumerate() {
                    for p in 0..k {
                        for q in 0..k {
                            g[(p, q)] += w * et.vectors[(p, r)] * et.vectors[(q, r)];
                        }
                    }
                }
            }
        }
    }
    grads.iter_mut().for_each(Mat::symmetrize);
    Ok(grads)
}
