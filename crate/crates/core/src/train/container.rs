//! `ISOCAPS1` model files: a magic line, the architecture, then every
//! parameter tensor under a `tensor <name> <rows> <cols>` header.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::model::{Model, ModelConfig};
use crate::train::params::ParamSet;

pub const MAGIC: &str = "ISOCAPS1";
const FORMAT_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn format_model(model: &Model) -> String {
    let c = model.config();
    let mut out = format!(
        "{MAGIC}\nversion {FORMAT_VERSION}\nconfig n={} k={} c={} d_c={} gamma={:e} iterations={} mode={} ablation={}\n",
        c.n, c.k, c.channels, c.capsule_dim, c.gamma, c.routing_iterations, c.match_mode, c.ablation
    );
    let params = model.params();
    for (spec, values) in params.specs().iter().zip(params.slices()) {
        out.push_str(&format!(
            "tensor {} {} {}\n",
            spec.name, spec.rows, spec.cols
        ));
        for row in values.chunks(spec.cols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

fn parse_config(line: &str) -> Result<ModelConfig> {
    let rest = line
        .strip_prefix("config ")
        .ok_or_else(|| format_err("missing config line"))?;
    let mut fields = std::collections::BTreeMap::new();
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| format_err(format!("bad config field `{tok}`")))?;
        fields.insert(k, v);
    }
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| format_err(format!("config lacks `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| format_err(format!("bad `{key}`")))
    };
    let config = ModelConfig {
        n: num("n")?,
        k: num("k")?,
        channels: num("c")?,
        capsule_dim: num("d_c")?,
        gamma: get("gamma")?
            .parse()
            .map_err(|_| format_err("bad `gamma`"))?,
        routing_iterations: num("iterations")?,
        match_mode: get("mode")?.parse().map_err(|_| format_err("bad `mode`"))?,
        ablation: get("ablation")?
            .parse()
            .map_err(|_| format_err("bad `ablation`"))?,
    };
    config
        .validate()
        .map_err(|e| format_err(format!("invalid architecture: {e}")))?;
    Ok(config)
}

pub fn parse_model(text: &str) -> Result<Model> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(format_err("missing ISOCAPS1 magic"));
    }
    match lines.next() {
        Some(l) if l == format!("version {FORMAT_VERSION}") => {}
        other => return Err(format_err(format!("unsupported version line {other:?}"))),
    }
    let config = parse_config(lines.next().unwrap_or_default())?;
    use rand::SeedableRng;
    let mut params = config.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    let specs = params.specs();
    for (spec, slice) in specs.iter().zip(params.slices_mut()) {
        let header = lines
            .next()
            .ok_or_else(|| format_err("file ends before all tensors"))?;
        let expected = format!("tensor {} {} {}", spec.name, spec.rows, spec.cols);
        if header != expected {
            return Err(format_err(format!(
                "expected `{expected}`, found `{header}`"
            )));
        }
        for row in slice.chunks_mut(spec.cols) {
            let line = lines
                .next()
                .ok_or_else(|| format_err(format!("tensor {} is truncated", spec.name)))?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| format_err(format!("bad value in tensor {}", spec.name)))?;
            if values.len() != row.len() {
                return Err(format_err(format!(
                    "tensor {} row has {} values",
                    spec.name,
                    values.len()
                )));
            }
            row.copy_from_slice(&values);
        }
    }
    if lines.next() != Some("end") || lines.any(|l| !l.trim().is_empty()) {
        return Err(format_err("missing end marker or trailing content"));
    }
    if params
        .templates
        .templates
        .iter()
        .any(|t| t.max_asymmetry() > 1e-9)
    {
        return Err(format_err("templates are not symmetric"));
    }
    Model::from_params(config, params)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| format_err("model file is not UTF-8 text"))?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::iso::MatchMode;
    use crate::train::model::Ablation;

    fn model() -> Model {
        let config = ModelConfig {
            n: 6,
            k: 3,
            channels: 2,
            capsule_dim: 4,
            gamma: 0.1,
            routing_iterations: 3,
            match_mode: MatchMode::Spectral,
            ablation: Ablation::LengthOnly,
        };
        Model::new(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let text = format_model(&m);
        assert!(text.starts_with("ISOCAPS1\n"));
        let back = parse_model(&text).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
        assert_eq!(format_model(&back), text);
    }

    #[test]
    fn corruption_is_reported() {
        let text = format_model(&model());
        let cases = [
            text.replacen("ISOCAPS1", "ISOCAPS2", 1),
            text.replacen("version 1", "version 9", 1),
            text.replacen("tensor routing 9 4", "tensor routing 9 5", 1),
            text.replacen("end\n", "", 1),
            text[..text.len() / 2].to_string(),
            text.replacen("d_c=4", "d_c=x", 1),
            format!("{text}extra\n"),
        ];
        for bad in cases {
            assert!(
                matches!(parse_model(&bad), Err(Error::ModelFormat(_))),
                "accepted: {}",
                &bad[..40]
            );
        }
    }
}
