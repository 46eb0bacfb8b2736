//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (run with `--nocapture` to see them) and then asserts the outcome.
//!
//! The orientation-discrimination run is shared: routing invariants,
//! reconstruction and determinism are all read off that same run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use isocaps_cli::commands::{cmd_bench_k, cmd_reconstruct, cmd_synth, cmd_train, SynthArgs};
use isocaps_cli::{CommonArgs, RunConfig};
use isocaps_core::capsule::{norm, squash};
use isocaps_core::data::{generate_synthetic, BrainGraph, SynthSpec};
use isocaps_core::iso::{match_bruteforce, match_spectral, MatchMode};
use isocaps_core::train::{
    gradient_check, Ablation, GradCheckOptions, Metrics, Model, ModelConfig,
};
use isocaps_core::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, pass: bool, detail: impl AsRef<str>) {
    println!(
        "criterion {id}: {}  {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
}

fn random_symmetric(k: usize, rng: &mut impl Rng) -> Mat {
    let mut m = Mat::from_fn(k, k, |_, _| rng.random_range(-1.0..=1.0));
    m.symmetrize();
    m
}

fn random_permutation(k: usize, rng: &mut impl Rng) -> Mat {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    Mat::from_fn(k, k, |a, b| if order[a] == b { 1.0 } else { 0.0 })
}

#[test]
fn criterion_1_matching_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_gap, mut worst_planted) = (f64::INFINITY, 0.0f64);
    for trial in 0..200 {
        let k = if trial % 2 == 0 { 3 } else { 4 };
        let template = random_symmetric(k, &mut rng);
        let region = random_symmetric(k, &mut rng);
        let (bf, _) = match_bruteforce(&template, &region).unwrap();
        let (sp, _) = match_spectral(&template, &region).unwrap();
        worst_gap = worst_gap.min(sp - bf);

        let q = random_permutation(k, &mut rng);
        let planted = q.matmul(&template).matmul(&q.transpose());
        let (bf, _) = match_bruteforce(&template, &planted).unwrap();
        let (sp, _) = match_spectral(&template, &planted).unwrap();
        worst_planted = worst_planted.max((1.0 - bf).abs()).max((1.0 - sp).abs());
    }
    let elapsed = start.elapsed();
    // Rounding in the spectral path may put it a hair below the exact minimum.
    let pass = worst_gap >= -1e-9 && worst_planted < 1e-6 && elapsed < Duration::from_secs(10);
    verdict(
        1,
        pass,
        format!("min(spectral - bruteforce) {worst_gap:.3e}, max |1 - score| planted {worst_planted:.3e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradient_fidelity() {
    let start = Instant::now();
    let config = ModelConfig {
        n: 8,
        k: 3,
        channels: 1,
        capsule_dim: 9,
        gamma: 0.1,
        routing_iterations: 2,
        match_mode: MatchMode::Bruteforce,
        ablation: Ablation::None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::new(config, &mut rng).unwrap();
    let mut adjacency = random_symmetric(8, &mut rng);
    for i in 0..8 {
        adjacency[(i, i)] = 0.0;
    }
    let graph = BrainGraph::new("g", 1, adjacency).unwrap();
    // With the production weight 5e-4 the decoder gradients sit near 1e-8,
    // under the rounding floor of a central difference on the full loss;
    // weight 1 exercises the same code path at a measurable scale (the
    // reconstruction gradient is linear in the weight).
    let report = gradient_check(&model, &graph, 1.0, GradCheckOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let worst = report.worst().map(|t| t.name.clone()).unwrap_or_default();
    let pass = report.passes(1e-4) && elapsed < Duration::from_secs(60);
    verdict(
        2,
        pass,
        format!(
            "max relative error {:.3e} ({worst}), {} tensors, {elapsed:.2?}",
            report.max_relative,
            report.tensors.len()
        ),
    );
    assert!(pass);
}

struct SeedRun {
    dir: PathBuf,
    dataset: PathBuf,
    full: Metrics,
    length_only: Metrics,
}

struct OrientationRuns {
    _root: tempfile::TempDir,
    seeds: Vec<SeedRun>,
    elapsed: Duration,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn config(dataset: &Path, out: &Path, seed: u64, extra: CommonArgs) -> RunConfig {
    RunConfig::resolve(&CommonArgs {
        dataset: Some(dataset.to_path_buf()),
        out: Some(out.to_path_buf()),
        seed: Some(seed),
        ..extra
    })
    .unwrap()
}

fn synth(out: &Path, seed: u64, noise: f64) {
    let cfg = RunConfig::resolve(&CommonArgs {
        out: Some(out.to_path_buf()),
        seed: Some(seed),
        ..Default::default()
    })
    .unwrap();
    let args = SynthArgs {
        common: CommonArgs::default(),
        n: 20,
        per_class: 30,
        motif: 4,
        noise,
    };
    cmd_synth(&cfg, &args).unwrap();
}

fn orientation_runs() -> &'static OrientationRuns {
    static RUNS: OnceLock<OrientationRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let root = tempfile::tempdir().unwrap();
        let seeds = SEEDS
            .iter()
            .map(|&seed| {
                let dir = root.path().join(format!("seed{seed}"));
                let dataset = root.path().join(format!("synth{seed}.bgd"));
                synth(&dataset, seed, 0.05);
                let full = cmd_train(&config(
                    &dataset,
                    &dir.join("full"),
                    seed,
                    CommonArgs::default(),
                ))
                .unwrap();
                let ablated = CommonArgs {
                    ablation: Some(Ablation::LengthOnly),
                    ..Default::default()
                };
                let length_only =
                    cmd_train(&config(&dataset, &dir.join("length-only"), seed, ablated)).unwrap();
                SeedRun {
                    dir,
                    dataset,
                    full: full.metrics,
                    length_only: length_only.metrics,
                }
            })
            .collect();
        OrientationRuns {
            _root: root,
            seeds,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_3_capsule_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_norm = 0.0f64;
    for i in 0..10_000 {
        let dir: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = match i % 5 {
            0 => 0.0,
            1 => 1e-9,
            2 => 1.0,
            3 => 1e3,
            _ => 10f64.powf(rng.random_range(-6.0..6.0)),
        };
        let scale = if target == 0.0 {
            0.0
        } else {
            target / norm(&dir)
        };
        let x: Vec<f64> = dir.iter().map(|v| v * scale).collect();
        worst_norm = worst_norm.max(norm(&squash(&x)));
    }
    let runs = orientation_runs();
    let (mut min_alpha, mut max_mass) = (f64::INFINITY, 0.0f64);
    for s in &runs.seeds {
        for m in [&s.full, &s.length_only] {
            min_alpha = min_alpha.min(m.routing.min_coefficient);
            max_mass = max_mass.max(m.routing.max_mass);
        }
    }
    let pass = worst_norm < 1.0 && min_alpha > 0.0 && max_mass < 1.0;
    verdict(
        3,
        pass,
        format!("max squash norm {worst_norm:.12}, routing min alpha {min_alpha:.3e}, max class mass {max_mass:.6}"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_length_only_blind_spot() {
    let root = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n: 20,
        count_per_class: 30,
        motif_size: 4,
        noise_std: 0.0,
        seed: 0,
    };
    let dataset_path = root.path().join("clean.bgd");
    synth(&dataset_path, 0, 0.0);
    let dataset = generate_synthetic(&spec).unwrap();
    let off = spec.motif_offset();

    let run = |ablation: Ablation, name: &str| {
        let extra = CommonArgs {
            ablation: Some(ablation),
            epochs: Some(10),
            ..Default::default()
        };
        cmd_train(&config(&dataset_path, &root.path().join(name), 0, extra))
            .unwrap()
            .model
    };
    let pair_difference = |model: &Model| {
        let mut worst = 0.0f64;
        for pair in dataset.graphs().chunks(2) {
            let a = model.forward(&pair[0]).unwrap();
            let b = model.forward(&pair[1]).unwrap();
            for i in 0..a.primary.channels {
                let (x, y) = (a.primary.at(i, off, off), b.primary.at(i, off, off));
                for (u, v) in x.iter().zip(y) {
                    worst = worst.max((u - v).abs());
                }
                worst =
                    worst.max((a.iso.scores[i][(off, off)] - b.iso.scores[i][(off, off)]).abs());
            }
        }
        worst
    };
    let blind = pair_difference(&run(Ablation::LengthOnly, "length-only"));
    let seeing = pair_difference(&run(Ablation::None, "full"));
    let pass = blind < 1e-6 && seeing > 0.1;
    verdict(
        4,
        pass,
        format!("motif window max pair difference: length-only {blind:.3e}, full {seeing:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_orientation_discrimination() {
    let runs = orientation_runs();
    let mean =
        |f: fn(&SeedRun) -> f64| runs.seeds.iter().map(f).sum::<f64>() / runs.seeds.len() as f64;
    let full = mean(|s| s.full.mean_accuracy);
    let length_only = mean(|s| s.length_only.mean_accuracy);
    let per_seed: Vec<String> = runs
        .seeds
        .iter()
        .map(|s| {
            format!(
                "{:.3}/{:.3}",
                s.full.mean_accuracy, s.length_only.mean_accuracy
            )
        })
        .collect();
    let pass = full >= 0.90 && length_only <= 0.65 && runs.elapsed < Duration::from_secs(15 * 60);
    verdict(
        5,
        pass,
        format!(
            "mean accuracy full {full:.3} (>= 0.90), length-only {length_only:.3} (<= 0.65); per seed {}; {:.1?}",
            per_seed.join(" "),
            runs.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_template_size_trend() {
    let root = tempfile::tempdir().unwrap();
    let dataset = root.path().join("synth.bgd");
    synth(&dataset, 0, 0.05);
    let rows = cmd_bench_k(&config(&dataset, root.path(), 0, CommonArgs::default())).unwrap();
    let times: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let increasing = times.windows(2).all(|w| w[1] > w[0]);
    let ratio = times[4] / times[3];
    let (acc1, acc4) = (rows[0].accuracy, rows[3].accuracy);
    let pass = increasing && ratio > 3.0 && acc1 < acc4;
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("k{}={:.2}s/{:.3}", r.k, r.seconds, r.accuracy))
        .collect();
    verdict(
        6,
        pass,
        format!(
            "time(5)/time(4) {ratio:.2}, acc(k=1) {acc1:.3} vs acc(k=4) {acc4:.3}; {}",
            table.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_reconstruction() {
    let runs = orientation_runs();
    let seed = &runs.seeds[0];
    let recon_drops = seed.full.folds.iter().all(|f| {
        let (first, last) = (f.epochs.first().unwrap(), f.epochs.last().unwrap());
        last.loss_recon < first.loss_recon
    });
    let first_last: Vec<String> = seed
        .full
        .folds
        .iter()
        .map(|f| {
            format!(
                "{:.4}->{:.4}",
                f.epochs[0].loss_recon,
                f.epochs.last().unwrap().loss_recon
            )
        })
        .collect();

    let untrained_dir = seed.dir.join("untrained");
    let extra = CommonArgs {
        epochs: Some(0),
        ..Default::default()
    };
    cmd_train(&config(&seed.dataset, &untrained_dir, SEEDS[0], extra)).unwrap();
    let out = seed.dir.join("pics");
    let cfg = config(&seed.dataset, &out, SEEDS[0], CommonArgs::default());
    let trained = cmd_reconstruct(&cfg, &seed.dir.join("full/model.isocaps"), "neg_0000").unwrap();
    let untrained =
        cmd_reconstruct(&cfg, &untrained_dir.join("model.isocaps"), "neg_0000").unwrap();
    let trained_dist = trained.reconstructed.sub(&trained.original).frobenius();
    let untrained_dist = untrained.reconstructed.sub(&untrained.original).frobenius();

    let pass = recon_drops && trained_dist < untrained_dist;
    verdict(
        7,
        pass,
        format!(
            "epoch recon loss per fold {}; reconstruct distance trained {trained_dist:.4} vs untrained {untrained_dist:.4}",
            first_last.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let runs = orientation_runs();
    let seed = &runs.seeds[0];
    let rerun = seed.dir.join("rerun");
    let status = Command::new(env!("CARGO_BIN_EXE_isocaps"))
        .args(["train", "--threads", "1", "--seed", &SEEDS[0].to_string()])
        .arg("--dataset")
        .arg(&seed.dataset)
        .arg("--out")
        .arg(&rerun)
        .output()
        .unwrap()
        .status;
    let original = fs::read(seed.dir.join("full/metrics.csv")).unwrap();
    let repeated = fs::read(rerun.join("metrics.csv")).unwrap_or_default();
    let pass = status.success() && original == repeated;
    verdict(
        8,
        pass,
        format!(
            "metrics.csv {} bytes, identical: {}",
            original.len(),
            original == repeated
        ),
    );
    assert!(pass);
}
