//! Text model files.
//!
//! ```text
//! redguard-model v1
//! kind=lstm
//! input_dim=13
//! hidden_dim=32
//! history_len=16
//! train.<field>=<value>        (optional, one per TrainConfig field)
//! mean=<d values>
//! std=<d values>
//! [gate_weights <rows> <cols>]
//! <rows lines of space-separated values>
//! [gate_bias 1 <4h>]
//! [readout_weights <d> <h>]
//! [readout_bias 1 <d>]
//! ```
//!
//! Values are written in shortest round-trip form, so a load reproduces the
//! model bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{LstmModel, Normalizer, SequencePredictor, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "redguard-model v1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn model_to_text(model: &LstmModel) -> String {
    let d = model.input_dim();
    let h = model.hidden_dim();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind={}", model.name());
    let _ = writeln!(out, "input_dim={d}");
    let _ = writeln!(out, "hidden_dim={h}");
    let _ = writeln!(out, "history_len={}", model.history_len());
    if let Some(c) = &model.config {
        let _ = writeln!(out, "train.learning_rate={}", c.learning_rate);
        let _ = writeln!(out, "train.lr_decay={}", c.lr_decay);
        let _ = writeln!(out, "train.lr_decay_every={}", c.lr_decay_every);
        let _ = writeln!(out, "train.epochs={}", c.epochs);
        let _ = writeln!(out, "train.batch_size={}", c.batch_size);
        let _ = writeln!(out, "train.seed={}", c.seed);
        let _ = writeln!(out, "train.clip_norm={}", c.clip_norm);
        let _ = writeln!(out, "train.forget_bias={}", c.forget_bias);
    }
    let norm = model.normalizer();
    let _ = writeln!(out, "mean={}", join(&norm.mean));
    let _ = writeln!(out, "std={}", join(&norm.std));
    let mut block = |name: &str, values: &[f64], cols: usize| {
        let _ = writeln!(out, "[{name} {} {cols}]", values.len() / cols);
        for row in values.chunks(cols) {
            let _ = writeln!(out, "{}", join(row));
        }
    };
    block("gate_weights", model.gate_weights(), d + h);
    block("gate_bias", model.gate_bias(), 4 * h);
    block("readout_weights", model.readout_weights(), h);
    block("readout_bias", model.readout_bias(), d);
    out
}

fn parse_values(line: &str, what: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("{what}: bad number `{v}`"))))
        .collect()
}

pub fn model_from_text(text: &str) -> Result<LstmModel> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(Error::Parse(format!("not a model file (expected `{MAGIC}` header)")));
    }
    let mut keys: BTreeMap<String, String> = BTreeMap::new();
    let mut blocks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut current: Option<(String, usize, usize, usize)> = None; // name, rows, cols, rows read
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            if let Some((name, rows, _, read)) = &current {
                if read != rows {
                    return Err(Error::Parse(format!("block `{name}` has {read} rows, expected {rows}")));
                }
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("bad block header `{line}`")));
            }
            let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad block size `{s}`")));
            current = Some((parts[0].to_string(), dim(parts[1])?, dim(parts[2])?, 0));
            blocks.insert(parts[0].to_string(), Vec::new());
            continue;
        }
        match current.as_mut() {
            Some((name, _, cols, read)) => {
                let row = parse_values(line, name)?;
                if row.len() != *cols {
                    return Err(Error::Parse(format!(
                        "block `{name}`: row with {} values, expected {cols}",
                        row.len()
                    )));
                }
                blocks.get_mut(name.as_str()).expect("block registered").extend(row);
                *read += 1;
            }
            None => {
                let (k, v) =
                    line.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value, got `{line}`")))?;
                keys.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    if let Some((name, rows, _, read)) = &current {
        if read != rows {
            return Err(Error::Parse(format!("block `{name}` has {read} rows, expected {rows}")));
        }
    }

    let key = |k: &str| keys.get(k).ok_or_else(|| Error::Parse(format!("missing `{k}`")));
    let usize_key = |k: &str| -> Result<usize> { key(k)?.parse().map_err(|_| Error::Parse(format!("bad `{k}`"))) };
    if key("kind")? != "lstm" {
        return Err(Error::Parse(format!("unsupported model kind `{}`", key("kind")?)));
    }
    let d = usize_key("input_dim")?;
    let h = usize_key("hidden_dim")?;
    let history_len = usize_key("history_len")?;
    let normalizer = Normalizer { mean: parse_values(key("mean")?, "mean")?, std: parse_values(key("std")?, "std")? };

    let config = if keys.contains_key("train.learning_rate") {
        let f = |k: &str| -> Result<f64> { key(k)?.parse().map_err(|_| Error::Parse(format!("bad `{k}`"))) };
        Some(TrainConfig {
            learning_rate: f("train.learning_rate")?,
            lr_decay: f("train.lr_decay")?,
            lr_decay_every: usize_key("train.lr_decay_every")?,
            epochs: usize_key("train.epochs")?,
            batch_size: usize_key("train.batch_size")?,
            history_len,
            hidden_dim: h,
            seed: key("train.seed")?.parse().map_err(|_| Error::Parse("bad `train.seed`".into()))?,
            clip_norm: f("train.clip_norm")?,
            forget_bias: f("train.forget_bias")?,
        })
    } else {
        None
    };

    let mut params = Vec::new();
    for name in ["gate_weights", "gate_bias", "readout_weights", "readout_bias"] {
        params.extend(blocks.remove(name).ok_or_else(|| Error::Parse(format!("missing block `{name}`")))?);
    }
    LstmModel::from_parts(d, h, history_len, params, normalizer, config)
}

pub fn save_model(model: &LstmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_text(&text)
}
