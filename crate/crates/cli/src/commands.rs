use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use isocaps_core::data::{
    generate_synthetic, load_dataset, save_dataset, write_matrix_rows, GraphDataset, SynthSpec,
};
use isocaps_core::iso::MatchMode;
use isocaps_core::train::{
    evaluate, load_model, save_model, train, Evaluation, Metrics, Model, TrainOutcome,
};
use isocaps_core::{Error as CoreError, Mat};

use crate::config::{CommonArgs, RunConfig};
use crate::error::CliError;
use crate::pgm::to_pgm;

#[derive(Debug, Parser)]
#[command(
    name = "isocaps",
    version,
    about = "Capsule networks over sub-graph isomorphism features of brain graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-class orientation dataset
    Synth(SynthArgs),
    /// Cross-validated training; writes metrics, config, templates and model
    Train(TrainArgs),
    /// Score a saved model on a dataset
    Eval(EvalArgs),
    /// Export one graph and its reconstruction as text and PGM heatmaps
    Reconstruct(ReconstructArgs),
    /// Train with k = 1..5 and record accuracy and training time
    BenchK(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
    #[arg(long, default_value_t = 4)]
    pub motif: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model file written by `train`
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub graph_id: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Reconstruct(a) => &a.common,
            Command::BenchK(a) => &a.common,
        }
    }
}

/// Resolves the configuration, sizes the worker pool and runs the command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.command.common())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::ThreadPool(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => {
            cmd_synth(&cfg, a).map(|d| println!("wrote {} graphs with {} nodes", d.len(), d.n()))
        }
        Command::Train(_) => cmd_train(&cfg).map(|o| print!("{}", summarize(&o.metrics))),
        Command::Eval(a) => {
            cmd_eval(&cfg, &a.model).map(|e| println!("accuracy {:.4}  f1 {:.4}", e.accuracy, e.f1))
        }
        Command::Reconstruct(a) => cmd_reconstruct(&cfg, &a.model, &a.graph_id).map(|r| {
            println!(
                "frobenius distance {:.6}; wrote {} files",
                r.distance,
                r.files.len()
            )
        }),
        Command::BenchK(_) => cmd_bench_k(&cfg).map(|rows| {
            for r in rows {
                println!(
                    "k={} accuracy {:.4} f1 {:.4} time {:.2}s",
                    r.k, r.accuracy, r.f1, r.seconds
                );
            }
        }),
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn cmd_synth(cfg: &RunConfig, args: &SynthArgs) -> Result<GraphDataset, CliError> {
    let spec = SynthSpec {
        n: args.n,
        count_per_class: args.per_class,
        motif_size: args.motif,
        noise_std: args.noise,
        seed: cfg.train.seed,
    };
    let out = cfg.out()?;
    let dataset = generate_synthetic(&spec)?;
    save_dataset(&dataset, out)?;
    let manifest = format!(
        "seed={}\nn={}\nper_class={}\nmotif={}\nnoise={}\nmotif_offset={}\ngraphs={}\n",
        spec.seed,
        spec.n,
        spec.count_per_class,
        spec.motif_size,
        spec.noise_std,
        spec.motif_offset(),
        dataset.len()
    );
    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".manifest");
    write(Path::new(&manifest_path), manifest)?;
    Ok(dataset)
}

fn export_templates(model: &Model) -> String {
    let mut buf = Vec::new();
    model
        .params()
        .templates
        .export(&mut buf)
        .expect("writing to memory");
    String::from_utf8(buf).expect("template export is ASCII")
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let dataset = load_dataset(cfg.dataset()?)?;
    let out = cfg.out()?;
    create_dir(out)?;
    write(&out.join("config.resolved"), cfg.to_file_text())?;
    let outcome = train(&dataset, &cfg.train)?;
    write(&out.join("metrics.csv"), outcome.metrics.to_csv())?;
    write(&out.join("templates.txt"), export_templates(&outcome.model))?;
    save_model(&outcome.model, out.join("model.isocaps"))?;
    Ok(outcome)
}

fn summarize(metrics: &Metrics) -> String {
    let mut s = String::new();
    for f in &metrics.folds {
        let _ = writeln!(
            s,
            "fold {}: accuracy {:.4}  f1 {:.4}",
            f.fold, f.test.accuracy, f.test.f1
        );
    }
    let _ = writeln!(
        s,
        "mean: accuracy {:.4}  f1 {:.4}",
        metrics.mean_accuracy, metrics.mean_f1
    );
    s
}

fn check_nodes(model: &Model, dataset: &GraphDataset) -> Result<(), CliError> {
    if !dataset.is_empty() && dataset.n() != model.config().n {
        return Err(CoreError::ShapeMismatch(format!(
            "model expects {} nodes, dataset has {}",
            model.config().n,
            dataset.n()
        ))
        .into());
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, model_path: &Path) -> Result<Evaluation, CliError> {
    let model = load_model(model_path)?;
    let dataset = load_dataset(cfg.dataset()?)?;
    check_nodes(&model, &dataset)?;
    let eval = evaluate(&model, dataset.graphs(), cfg.train.delta)?;
    let out = match &cfg.out {
        Some(dir) => dir.clone(),
        None => model_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    create_dir(&out)?;
    let csv = format!(
        "{}\nall,-,eval,{:.8},{:.8},{:.8},{:.6},{:.6}\n",
        Metrics::CSV_HEADER,
        eval.loss_margin,
        eval.loss_recon,
        eval.loss_total,
        eval.accuracy,
        eval.f1
    );
    write(&out.join("eval.csv"), csv)?;
    Ok(eval)
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub original: Mat,
    pub reconstructed: Mat,
    pub distance: f64,
    pub files: Vec<PathBuf>,
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn matrix_text(m: &Mat) -> String {
    let mut buf = Vec::new();
    write_matrix_rows(&mut buf, m).expect("writing to memory");
    String::from_utf8(buf).expect("matrix text is ASCII")
}

pub fn cmd_reconstruct(
    cfg: &RunConfig,
    model_path: &Path,
    graph_id: &str,
) -> Result<Reconstruction, CliError> {
    let model = load_model(model_path)?;
    let dataset = load_dataset(cfg.dataset()?)?;
    check_nodes(&model, &dataset)?;
    let graph = dataset
        .find(graph_id)
        .ok_or_else(|| CoreError::UnknownGraphId(graph_id.to_string()))?;
    let fwd = model.forward(graph)?;
    let out = cfg.out()?;
    create_dir(out)?;
    let stem = file_stem(graph_id);
    let mut files = Vec::new();
    for (tag, m) in [
        ("original", &graph.adjacency),
        ("reconstructed", &fwd.reconstruction),
    ] {
        let txt = out.join(format!("{stem}_{tag}.txt"));
        write(&txt, matrix_text(m))?;
        let pgm = out.join(format!("{stem}_{tag}.pgm"));
        write(&pgm, to_pgm(m))?;
        files.extend([txt, pgm]);
    }
    Ok(Reconstruction {
        original: graph.adjacency.clone(),
        reconstructed: fwd.reconstruction.clone(),
        distance: fwd.loss.reconstruction,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub k: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub seconds: f64,
    /// Spectral-mode numbers, recorded for the largest k only.
    pub spectral: Option<(f64, f64, f64)>,
}

pub const BENCH_KS: std::ops::RangeInclusive<usize> = 1..=5;

pub fn cmd_bench_k(cfg: &RunConfig) -> Result<Vec<BenchRow>, CliError> {
    let dataset = load_dataset(cfg.dataset()?)?;
    let out = cfg.out()?;
    create_dir(out)?;
    write(&out.join("config.resolved"), cfg.to_file_text())?;
    let run = |k: usize, mode: MatchMode| -> Result<(TrainOutcome, f64), CliError> {
        let mut train_cfg = cfg.train.clone();
        train_cfg.k = k;
        train_cfg.match_mode = mode;
        let start = Instant::now();
        let outcome = train(&dataset, &train_cfg)?;
        Ok((outcome, start.elapsed().as_secs_f64()))
    };
    let mut rows = Vec::new();
    let mut csv =
        String::from("k,accuracy,f1,time_s,spectral_accuracy,spectral_f1,spectral_time_s\n");
    for k in BENCH_KS {
        let (outcome, seconds) = run(k, MatchMode::Bruteforce)?;
        write(
            &out.join(format!("templates_k{k}.txt")),
            export_templates(&outcome.model),
        )?;
        let spectral = if k == *BENCH_KS.end() {
            let (s, secs) = run(k, MatchMode::Spectral)?;
            write(
                &out.join(format!("templates_k{k}_spectral.txt")),
                export_templates(&s.model),
            )?;
            Some((s.metrics.mean_accuracy, s.metrics.mean_f1, secs))
        } else {
            None
        };
        let m = &outcome.metrics;
        let _ = write!(
            csv,
            "{k},{:.6},{:.6},{:.3}",
            m.mean_accuracy, m.mean_f1, seconds
        );
        match spectral {
            Some((a, f, t)) => {
                let _ = writeln!(csv, ",{a:.6},{f:.6},{t:.3}");
            }
            None => csv.push_str(",,,\n"),
        }
        rows.push(BenchRow {
            k,
            accuracy: m.mean_accuracy,
            f1: m.mean_f1,
            seconds,
            spectral,
        });
    }
    write(&out.join("bench_k.csv"), csv)?;
    Ok(rows)
}
