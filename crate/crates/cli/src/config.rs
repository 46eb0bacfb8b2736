//! Flat `key=value` run configuration. Precedence: built-in defaults, then
//! the `--config` file, then command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use isocaps_core::iso::MatchMode;
use isocaps_core::train::{Ablation, TrainConfig};

use crate::error::CliError;

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Input dataset (BGD text file)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output file or directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the per-graph parallel map
    #[arg(long)]
    pub threads: Option<usize>,
    /// key=value file; flags given on the command line win
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Template size
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of templates (channels)
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<MatchMode>,
    /// Padding value for vanishing capsule entries
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Weight of the reconstruction loss
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Routing iterations
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Class capsule dimension (default k²)
    #[arg(long)]
    pub d_c: Option<usize>,
    /// Early stopping patience in epochs (off by default)
    #[arg(long)]
    pub patience: Option<usize>,
}

fn parse_mode(s: &str) -> Result<MatchMode, String> {
    s.parse().map_err(|e: isocaps_core::Error| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: isocaps_core::Error| e.to_string())
}

/// Everything a command needs after merging all sources.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = RunConfig {
            train: TrainConfig::default(),
            dataset: None,
            out: None,
            threads: None,
        };
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_file(path, &text)?;
        }
        cfg.apply_flags(args);
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path, text: &str) -> Result<(), CliError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| CliError::ConfigFile {
                path: path.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            self.set(key, value).map_err(err)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value `{v}` for {key}"))
        }
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "threads" => self.threads = Some(num(key, value)?),
            "seed" => t.seed = num(key, value)?,
            "k" => t.k = num(key, value)?,
            "c" => t.channels = num(key, value)?,
            "mode" => {
                t.match_mode = value
                    .parse()
                    .map_err(|e: isocaps_core::Error| e.to_string())?
            }
            "gamma" => t.gamma = num(key, value)?,
            "delta" => t.delta = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "batch" => t.batch_size = num(key, value)?,
            "lr" => t.learning_rate = num(key, value)?,
            "ablation" => {
                t.ablation = value
                    .parse()
                    .map_err(|e: isocaps_core::Error| e.to_string())?
            }
            "weight_decay" => t.weight_decay = num(key, value)?,
            "iterations" => t.routing_iterations = num(key, value)?,
            "d_c" => {
                t.capsule_dim = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "patience" => {
                t.patience = if value == "off" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn apply_flags(&mut self, a: &CommonArgs) {
        let t = &mut self.train;
        macro_rules! take {
            ($flag:expr => $dst:expr) => {
                if let Some(v) = $flag.clone() {
                    $dst = v;
                }
            };
        }
        take!(a.seed => t.seed);
        take!(a.k => t.k);
        take!(a.c => t.channels);
        take!(a.mode => t.match_mode);
        take!(a.gamma => t.gamma);
        take!(a.delta => t.delta);
        take!(a.epochs => t.epochs);
        take!(a.batch => t.batch_size);
        take!(a.lr => t.learning_rate);
        take!(a.ablation => t.ablation);
        take!(a.weight_decay => t.weight_decay);
        take!(a.iterations => t.routing_iterations);
        if a.d_c.is_some() {
            t.capsule_dim = a.d_c;
        }
        if a.patience.is_some() {
            t.patience = a.patience;
        }
        if a.dataset.is_some() {
            self.dataset = a.dataset.clone();
        }
        if a.out.is_some() {
            self.out = a.out.clone();
        }
        if a.threads.is_some() {
            self.threads = a.threads;
        }
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or(CliError::MissingOption("dataset"))
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or(CliError::MissingOption("out"))
    }

    /// The effective configuration in the same format `--config` reads.
    /// Thread count and paths are omitted so outputs of identical runs match.
    pub fn to_file_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", t.seed);
        let _ = writeln!(s, "k={}", t.k);
        let _ = writeln!(s, "c={}", t.channels);
        let _ = writeln!(
            s,
            "d_c={}",
            t.capsule_dim.map_or("auto".to_string(), |d| d.to_string())
        );
        let _ = writeln!(s, "mode={}", t.match_mode);
        let _ = writeln!(s, "gamma={}", t.gamma);
        let _ = writeln!(s, "delta={}", t.delta);
        let _ = writeln!(s, "epochs={}", t.epochs);
        let _ = writeln!(s, "batch={}", t.batch_size);
        let _ = writeln!(s, "lr={}", t.learning_rate);
        let _ = writeln!(s, "weight_decay={}", t.weight_decay);
        let _ = writeln!(s, "iterations={}", t.routing_iterations);
        let _ = writeln!(s, "ablation={}", t.ablation);
        let _ = writeln!(
            s,
            "patience={}",
            t.patience.map_or("off".to_string(), |p| p.to_string())
        );
        s
    }
}
