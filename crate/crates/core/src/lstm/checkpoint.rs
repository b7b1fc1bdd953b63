//! Plain-text model checkpoints.
//!
//! Line-oriented `key value` pairs after a version header, followed by the
//! flat weight vector one value per line. Floats use the shortest
//! representation that parses back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::params::{Layout, ModelParams};
use super::{ModelConfig, Optimizer};
use crate::error::{Error, Result};

pub const HEADER: &str = "dispad-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config_hash: Option<String>,
    /// Free-form provenance carried through unchanged (`meta.<key> <value>`).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Checkpoint { params, config_hash: None, meta: BTreeMap::new() }
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn render_checkpoint(ck: &Checkpoint) -> String {
    let p = &ck.params;
    let c = &p.config;
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    let _ = writeln!(s, "layers {}", c.layers);
    let _ = writeln!(s, "hidden {}", c.hidden);
    let _ = writeln!(s, "window {}", c.window);
    let _ = writeln!(s, "input_channels {}", c.input_channels);
    let _ = writeln!(s, "batch_size {}", c.batch_size);
    let _ = writeln!(s, "learning_rate {}", c.learning_rate);
    let _ = writeln!(s, "lr_decay {}", c.lr_decay);
    let _ = writeln!(s, "decay_every {}", c.decay_every);
    let _ = writeln!(s, "grad_clip {}", c.grad_clip);
    let _ = writeln!(s, "epochs {}", c.epochs);
    let _ = writeln!(s, "seed {}", c.seed);
    let _ = writeln!(s, "optimizer {}", c.optimizer.as_str());
    let _ = writeln!(s, "layer_norm {}", c.layer_norm);
    let _ = writeln!(s, "input_mean {}", join(&p.input_mean));
    let _ = writeln!(s, "input_var {}", join(&p.input_var));
    let _ = writeln!(s, "target_mean {}", p.target_mean);
    let _ = writeln!(s, "target_scale {}", p.target_scale);
    if let Some(h) = &ck.config_hash {
        let _ = writeln!(s, "config_hash {h}");
    }
    for (k, v) in &ck.meta {
        let _ = writeln!(s, "meta.{k} {v}");
    }
    let _ = writeln!(s, "weights {}", p.weights.len());
    for w in &p.weights {
        let _ = writeln!(s, "{w}");
    }
    s
}

pub fn parse_checkpoint(text: &str, origin: &str) -> Result<Checkpoint> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.into(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, other)) => return Err(err(n, format!("expected '{HEADER}', found '{other}'"))),
        None => return Err(err(1, "empty checkpoint".into())),
    }
    let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut weights = None;
    while let Some((n, line)) = lines.next() {
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        if key == "weights" {
            let count: usize = value.parse().map_err(|_| err(n, format!("bad weight count '{value}'")))?;
            let mut ws = Vec::with_capacity(count);
            for _ in 0..count {
                let (m, l) = lines.next().ok_or_else(|| err(n, format!("expected {count} weights")))?;
                ws.push(l.trim().parse::<f64>().map_err(|_| err(m, format!("bad weight '{l}'")))?);
            }
            if let Some((m, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
                return Err(err(m, format!("trailing content '{l}'")));
            }
            weights = Some(ws);
            break;
        }
        if let Some(k) = key.strip_prefix("meta.") {
            meta.insert(k.to_string(), value.to_string());
        } else if kv.insert(key.to_string(), (n, value.to_string())).is_some() {
            return Err(err(n, format!("duplicate key '{key}'")));
        }
    }
    let weights = weights.ok_or_else(|| err(0, "missing weights section".into()))?;

    let mut take = |k: &str| kv.remove(k).ok_or_else(|| err(0, format!("missing key '{k}'")));
    fn num<T: std::str::FromStr>(v: (usize, String), k: &str, origin: &str) -> Result<T> {
        v.1.trim().parse().map_err(|_| Error::Parse {
            path: origin.into(),
            line: v.0,
            msg: format!("bad value for {k}: '{}'", v.1),
        })
    }
    fn floats(v: (usize, String), k: &str, origin: &str) -> Result<Vec<f64>> {
        v.1.split_whitespace()
            .map(|x| {
                x.parse().map_err(|_| Error::Parse {
                    path: origin.into(),
                    line: v.0,
                    msg: format!("bad value in {k}: '{x}'"),
                })
            })
            .collect()
    }
    let optimizer = take("optimizer")?;
    let config = ModelConfig {
        layers: num(take("layers")?, "layers", origin)?,
        hidden: num(take("hidden")?, "hidden", origin)?,
        window: num(take("window")?, "window", origin)?,
        input_channels: num(take("input_channels")?, "input_channels", origin)?,
        batch_size: num(take("batch_size")?, "batch_size", origin)?,
        learning_rate: num(take("learning_rate")?, "learning_rate", origin)?,
        lr_decay: num(take("lr_decay")?, "lr_decay", origin)?,
        decay_every: num(take("decay_every")?, "decay_every", origin)?,
        grad_clip: num(take("grad_clip")?, "grad_clip", origin)?,
        epochs: num(take("epochs")?, "epochs", origin)?,
        seed: num(take("seed")?, "seed", origin)?,
        optimizer: optimizer.1.parse::<Optimizer>().map_err(|e| err(optimizer.0, e.to_string()))?,
        layer_norm: num(take("layer_norm")?, "layer_norm", origin)?,
    };
    let input_mean = floats(take("input_mean")?, "input_mean", origin)?;
    let input_var = floats(take("input_var")?, "input_var", origin)?;
    let target_mean = num(take("target_mean")?, "target_mean", origin)?;
    let target_scale = num(take("target_scale")?, "target_scale", origin)?;
    let config_hash = kv.remove("config_hash").map(|v| v.1);
    if let Some((k, (n, _))) = kv.into_iter().next() {
        return Err(err(n, format!("unknown key '{k}'")));
    }
    config.validate()?;
    let expected = Layout::new(&config).total;
    if weights.len() != expected {
        return Err(Error::Shape {
            expected: format!("{expected} weights"),
            got: format!("{} weights", weights.len()),
        });
    }
    if input_mean.len() != config.input_channels || input_var.len() != config.input_channels {
        return Err(Error::Shape {
            expected: format!("{} input statistics", config.input_channels),
            got: format!("{}/{}", input_mean.len(), input_var.len()),
        });
    }
    Ok(Checkpoint {
        params: ModelParams { config, weights, input_mean, input_var, target_mean, target_scale },
        config_hash,
        meta,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, render_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text, &path.display().to_string())
}
