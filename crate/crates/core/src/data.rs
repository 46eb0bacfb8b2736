//! Brain-graph instances, the BGD text format, the synthetic
//! orientation-discrimination generator and stratified 3-fold splits.
//!
//! A BGD file is UTF-8 text with space separated tokens:
//!
//! ```text
//! <num_graphs> <n>
//! <id> <label>
//! <n rows of n decimal values>
//! ...
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Maximum tolerated `|A(i,j) - A(j,i)|` before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-6;
const RANGE_TOL: f64 = 1e-9;
/// Number of cross-validation folds.
pub const NUM_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BrainGraph {
    pub id: String,
    /// 0 = negative, 1 = positive.
    pub label: usize,
    pub adjacency: Mat,
}

impl BrainGraph {
    /// Validates the adjacency matrix and symmetrizes tiny float noise away.
    pub fn new(id: impl Into<String>, label: usize, mut adjacency: Mat) -> Result<Self> {
        let id = id.into();
        if label > 1 {
            return Err(Error::LabelOutOfRange {
                id,
                label: label as i64,
            });
        }
        if !adjacency.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "graph `{id}` adjacency is {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        let deviation = adjacency.max_asymmetry();
        if deviation > SYMMETRY_TOL {
            return Err(Error::AsymmetricMatrix { id, deviation });
        }
        if let Some(&value) = adjacency
            .as_slice()
            .iter()
            .find(|v| v.is_nan() || v.abs() > 1.0 + RANGE_TOL)
        {
            return Err(Error::EntryOutOfRange { id, value });
        }
        adjacency.symmetrize();
        Ok(Self {
            id,
            label,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    graphs: Vec<BrainGraph>,
    n: usize,
    pub class_names: [String; 2],
}

impl GraphDataset {
    pub fn new(n: usize, graphs: Vec<BrainGraph>) -> Result<Self> {
        if let Some(g) = graphs.iter().find(|g| g.n() != n) {
            return Err(Error::InconsistentNodeCount {
                id: g.id.clone(),
                expected: n,
                found: g.n(),
            });
        }
        Ok(Self {
            graphs,
            n,
            class_names: ["negative".into(), "positive".into()],
        })
    }

    pub fn graphs(&self) -> &[BrainGraph] {
        &self.graphs
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    pub fn find(&self, id: &str) -> Option<&BrainGraph> {
        self.graphs.iter().find(|g| g.id == id)
    }

    /// Graphs at the given positions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Vec<BrainGraph> {
        indices.iter().map(|&i| self.graphs[i].clone()).collect()
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-blank line with its 1-based line number.
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (idx, line) in self.inner.by_ref() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                return Some((idx + 1, tokens));
            }
        }
        None
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        line,
        reason: reason.into(),
    }
}

pub fn parse_dataset(text: &str) -> Result<GraphDataset> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (line, header) = lines
        .next_tokens()
        .ok_or_else(|| malformed(1, "empty file"))?;
    if header.len() != 2 {
        return Err(malformed(line, "header must be `<num_graphs> <n>`"));
    }
    let count: usize = header[0]
        .parse()
        .map_err(|_| malformed(line, "bad graph count"))?;
    let n: usize = header[1]
        .parse()
        .map_err(|_| malformed(line, "bad node count"))?;
    if n == 0 {
        return Err(malformed(line, "node count must be positive"));
    }

    let mut graphs = Vec::with_capacity(count);
    for g in 0..count {
        let (line, head) = lines
            .next_tokens()
            .ok_or_else(|| malformed(text.lines().count(), format!("missing graph {g}")))?;
        if head.len() != 2 {
            return Err(malformed(line, "graph header must be `<id> <label>`"));
        }
        let id = head[0].to_string();
        let label: i64 = head[1]
            .parse()
            .map_err(|_| malformed(line, "label is not an integer"))?;
        if !(0..=1).contains(&label) {
            return Err(Error::LabelOutOfRange { id, label });
        }
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            let (line, row) = lines.next_tokens().ok_or_else(|| {
                malformed(
                    text.lines().count(),
                    format!("graph `{id}` ends after {r} of {n} rows"),
                )
            })?;
            let values: std::result::Result<Vec<f64>, _> =
                row.iter().map(|t| t.parse::<f64>()).collect();
            let values = values.map_err(|_| {
                malformed(line, format!("graph `{id}` row {r} has non-numeric values"))
            })?;
            if values.len() != n {
                return Err(Error::InconsistentNodeCount {
                    id,
                    expected: n,
                    found: values.len(),
                });
            }
            data.extend(values);
        }
        graphs.push(BrainGraph::new(
            id,
            label as usize,
            Mat::from_vec(n, n, data),
        )?);
    }
    if let Some((line, _)) = lines.next_tokens() {
        return Err(malformed(
            line,
            format!("trailing content after {count} graphs"),
        ));
    }
    GraphDataset::new(n, graphs)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<GraphDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Writes one matrix as n lines of space separated values with 9 decimals.
pub fn write_matrix_rows(out: &mut impl Write, m: &Mat) -> std::io::Result<()> {
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.9}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn format_dataset(dataset: &GraphDataset) -> String {
    let mut buf = Vec::new();
    write_dataset(&mut buf, dataset).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("dataset text is ASCII")
}

fn write_dataset(out: &mut impl Write, dataset: &GraphDataset) -> std::io::Result<()> {
    writeln!(out, "{} {}", dataset.len(), dataset.n())?;
    for g in dataset.graphs() {
        writeln!(out, "{} {}", g.id, g.label)?;
        write_matrix_rows(out, &g.adjacency)?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &GraphDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dataset(&mut out, dataset)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic orientation-discrimination dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub count_per_class: usize,
    pub motif_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.motif_size < 2 {
            return Err(Error::BadSpec(format!(
                "motif size {} leaves no non-identity reordering",
                self.motif_size
            )));
        }
        if self.motif_size > self.n {
            return Err(Error::BadSpec(format!(
                "motif size {} exceeds node count {}",
                self.motif_size, self.n
            )));
        }
        if self.count_per_class == 0 {
            return Err(Error::BadSpec("count per class must be at least 1".into()));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::BadSpec(format!(
                "noise std {} must be finite and >= 0",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// First node of the planted motif block.
    pub fn motif_offset(&self) -> usize {
        (self.n - self.motif_size) / 2
    }
}

/// Self-loop weight added to motif node 0.
pub const SYMMETRY_BREAK: f64 = 0.1;

/// The fixed motif planted in class-0 graphs.
///
/// A circulant base (edge weight set by cyclic distance) plus a small
/// self-loop on node 0 that breaks the cyclic symmetry, so that the
/// cyclically reordered copy differs from the original. Keeping the
/// perturbation small keeps windows that only partly cover the motif
/// nearly identical across the two orientations.
pub fn synthetic_motif(m: usize) -> Mat {
    let mut motif = Mat::from_fn(m, m, |a, b| {
        let d = a.abs_diff(b);
        match d.min(m - d) {
            0 => 0.0,
            1 => 0.7,
            2 => -0.3,
            d => 0.15 * if d % 2 == 0 { 1.0 } else { -1.0 },
        }
    });
    motif[(0, 0)] += SYMMETRY_BREAK;
    motif
}

/// Cyclic shift `Q` with `Q(a, a+1 mod m) = 1`.
pub fn cyclic_shift(m: usize) -> Mat {
    Mat::from_fn(m, m, |a, b| if b == (a + 1) % m { 1.0 } else { 0.0 })
}

/// `Q M Qᵀ`.
pub fn reorient(motif: &Mat, q: &Mat) -> Mat {
    q.matmul(motif).matmul(&q.transpose())
}

/// Class 0 carries the motif, class 1 its cyclically reordered copy at the
/// same nodes. Graphs alternate negative/positive so pair `i` is at
/// positions `2i` and `2i + 1`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<GraphDataset> {
    spec.validate()?;
    let SynthSpec {
        n,
        count_per_class,
        motif_size: m,
        noise_std,
        seed,
    } = *spec;
    let motif = synthetic_motif(m);
    let rotated = reorient(&motif, &cyclic_shift(m));
    let offset = spec.motif_offset();
    let in_motif = |i: usize| (offset..offset + m).contains(&i);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::BadSpec(e.to_string()))?;

    let mut graphs = Vec::with_capacity(2 * count_per_class);
    for pair in 0..count_per_class {
        for (label, block) in [(0usize, &motif), (1usize, &rotated)] {
            let mut adjacency = Mat::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    if in_motif(i) && in_motif(j) {
                        continue;
                    }
                    let value = if noise_std > 0.0 {
                        normal.sample(&mut rng)
                    } else {
                        0.0
                    };
                    let value = value.clamp(-1.0, 1.0);
                    adjacency[(i, j)] = value;
                    adjacency[(j, i)] = value;
                }
            }
            for a in 0..m {
                for b in 0..m {
                    adjacency[(offset + a, offset + b)] = block[(a, b)].clamp(-1.0, 1.0);
                }
            }
            let prefix = if label == 0 { "neg" } else { "pos" };
            graphs.push(BrainGraph::new(
                format!("{prefix}_{pair:04}"),
                label,
                adjacency,
            )?);
        }
    }
    GraphDataset::new(n, graphs)
}

/// Per-graph fold index in `0..NUM_FOLDS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub fold_assignments: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn fold_sizes(&self) -> [usize; NUM_FOLDS] {
        let mut sizes = [0; NUM_FOLDS];
        for &f in &self.fold_assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// (training indices, held-out indices) for one fold, in dataset order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.fold_assignments.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Stratified assignment to three folds: each class is shuffled with the
/// seed and dealt round-robin, the deal continuing across classes so fold
/// sizes differ by at most one.
pub fn make_folds(labels: &[usize], seed: u64) -> SplitPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_assignments = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..=1 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_assignments[i] = next;
            next = (next + 1) % NUM_FOLDS;
        }
    }
    // Labels outside {0, 1} cannot occur in a validated dataset.
    debug_assert!(labels.iter().all(|&l| l <= 1));
    SplitPlan {
        fold_assignments,
        seed,
    }
}

/// Fisher-Yates shuffle helper shared with the trainer.
pub fn shuffled_indices(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx
}
