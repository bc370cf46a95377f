//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use sqlgnn::model::{Ablations, ModelConfig, TrainConfig};

/// Everything a run depends on. Defaults give the full GNN model.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Keys set by a file or override rather than left at their default.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 1,
            explicit: BTreeSet::new(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("bad value `{v}` for `{key}`, expected true or false")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "d_word" => m.d_word = num(key, value)?,
            "d_node" => m.d_node = num(key, value)?,
            "d_enc" => m.d_enc = num(key, value)?,
            "d_dec" => m.d_dec = num(key, value)?,
            "d_att" => m.d_att = num(key, value)?,
            "gnn_steps" => m.gnn_steps = num(key, value)?,
            "beam_size" => m.beam_size = num(key, value)?,
            "max_steps" => m.max_steps = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "lr" => t.adam.lr = num(key, value)?,
            "beta1" => t.adam.beta1 = num(key, value)?,
            "beta2" => t.adam.beta2 = num(key, value)?,
            "eps" => t.adam.eps = num(key, value)?,
            "clip" => t.clip = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ if Ablations::NAMES.contains(&key) => {
                let on = flag(key, value)?;
                m.ablations.set(key, on).map_err(|e| e.to_string())?;
            }
            _ => return Err(format!("unknown configuration key `{key}`")),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected `key = value`", n + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("{origin}:{}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), String> {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("override `{kv}` is not key=value"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        let a = &self.train.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            return Err("lr must be a nonnegative number".into());
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(a.eps > 0.0) || !(self.train.clip >= 0.0) {
            return Err("eps must be positive and clip nonnegative".into());
        }
        Ok(())
    }

    /// The effective configuration in the same format `apply_text` reads.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        for (k, v) in [
            ("d_word", m.d_word.to_string()),
            ("d_node", m.d_node.to_string()),
            ("d_enc", m.d_enc.to_string()),
            ("d_dec", m.d_dec.to_string()),
            ("d_att", m.d_att.to_string()),
            ("gnn_steps", m.gnn_steps.to_string()),
            ("beam_size", m.beam_size.to_string()),
            ("max_steps", m.max_steps.to_string()),
            ("epochs", t.epochs.to_string()),
            ("lr", t.adam.lr.to_string()),
            ("beta1", t.adam.beta1.to_string()),
            ("beta2", t.adam.beta2.to_string()),
            ("eps", t.adam.eps.to_string()),
            ("clip", t.clip.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        for name in Ablations::NAMES {
            let _ = writeln!(s, "{name} = {}", m.ablations.get(name).unwrap_or(false));
        }
        s
    }

    /// Explicitly set model-shape keys whose values differ from `other`, as
    /// `(key, ours, theirs)`.
    pub fn shape_differences(&self, other: &ModelConfig) -> Vec<(&'static str, usize, usize)> {
        let m = &self.model;
        [
            ("d_word", m.d_word, other.d_word),
            ("d_node", m.d_node, other.d_node),
            ("d_enc", m.d_enc, other.d_enc),
            ("d_dec", m.d_dec, other.d_dec),
            ("d_att", m.d_att, other.d_att),
            ("gnn_steps", m.gnn_steps, other.gnn_steps),
            ("max_steps", m.max_steps, other.max_steps),
        ]
        .into_iter()
        .filter(|(k, a, b)| a != b && self.explicit.contains(*k))
        .collect()
    }
}
