//! Training options shared by `train` flags, `--config` files and experiment specs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use morphtag::{Architecture, Dims, TrainConfig};

use crate::error::{CliError, CliResult};

/// `lang=path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LangPath {
    pub language: String,
    pub path: PathBuf,
}

impl FromStr for LangPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once('=') {
            Some((l, p)) if !l.is_empty() && !p.is_empty() => {
                Ok(Self { language: l.to_string(), path: PathBuf::from(p) })
            }
            _ => Err(format!("expected LANG=PATH, got {s:?}")),
        }
    }
}

impl fmt::Display for LangPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.language, self.path.display())
    }
}

/// `N` or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TargetSize(pub Option<usize>);

impl FromStr for TargetSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(Self(None));
        }
        match s.parse::<usize>() {
            Ok(0) => Err("target size must be at least 1".into()),
            Ok(n) => Ok(Self(Some(n))),
            Err(_) => Err(format!("expected a sentence count or `all`, got {s:?}")),
        }
    }
}

impl fmt::Display for TargetSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("all"),
        }
    }
}

/// `N` epochs or `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patience(pub Option<usize>);

impl FromStr for Patience {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(Self(None));
        }
        s.parse().map(|n| Self(Some(n))).map_err(|_| format!("expected a number or `none`, got {s:?}"))
    }
}

/// Optional overrides of the training defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// mono, universal, specific or joint
    #[arg(long)]
    pub arch: Option<Architecture>,
    /// Target training sentences to keep (N or `all`)
    #[arg(long, value_name = "N|all")]
    pub target_size: Option<TargetSize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub char_emb: Option<usize>,
    #[arg(long)]
    pub char_hidden: Option<usize>,
    #[arg(long)]
    pub ctx_hidden: Option<usize>,
    #[arg(long)]
    pub langid_hidden: Option<usize>,
    /// Early-stopping patience in epochs, or `none`
    #[arg(long, value_name = "N|none")]
    pub patience: Option<Patience>,
}

pub const KEYS: &[&str] = &[
    "arch",
    "target-size",
    "seed",
    "epochs",
    "batch-size",
    "lr",
    "lr-decay",
    "rho",
    "epsilon",
    "dropout",
    "clip-norm",
    "char-emb",
    "char-hidden",
    "ctx-hidden",
    "langid-hidden",
    "patience",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| CliError::usage(format!("setting {key}: {e}")))
}

impl Overrides {
    /// Reads settings from `key = value` pairs; keys accept `-` or `_`.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> CliResult<Self> {
        let mut o = Self::default();
        for (key, value) in pairs {
            let k = key.replace('_', "-");
            let v = value.as_str();
            match k.as_str() {
                "arch" => o.arch = Some(parse_value(&k, v)?),
                "target-size" => o.target_size = Some(parse_value(&k, v)?),
                "seed" => o.seed = Some(parse_value(&k, v)?),
                "epochs" => o.epochs = Some(parse_value(&k, v)?),
                "batch-size" => o.batch_size = Some(parse_value(&k, v)?),
                "lr" => o.lr = Some(parse_value(&k, v)?),
                "lr-decay" => o.lr_decay = Some(parse_value(&k, v)?),
                "rho" => o.rho = Some(parse_value(&k, v)?),
                "epsilon" => o.epsilon = Some(parse_value(&k, v)?),
                "dropout" => o.dropout = Some(parse_value(&k, v)?),
                "clip-norm" => o.clip_norm = Some(parse_value(&k, v)?),
                "char-emb" => o.char_emb = Some(parse_value(&k, v)?),
                "char-hidden" => o.char_hidden = Some(parse_value(&k, v)?),
                "ctx-hidden" => o.ctx_hidden = Some(parse_value(&k, v)?),
                "langid-hidden" => o.langid_hidden = Some(parse_value(&k, v)?),
                "patience" => o.patience = Some(parse_value(&k, v)?),
                _ => {
                    return Err(CliError::usage(format!(
                        "unknown setting {key:?} (known: {})",
                        KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(o)
    }

    /// Fields set here win over `other`.
    pub fn or(self, other: Self) -> Self {
        Self {
            arch: self.arch.or(other.arch),
            target_size: self.target_size.or(other.target_size),
            seed: self.seed.or(other.seed),
            epochs: self.epochs.or(other.epochs),
            batch_size: self.batch_size.or(other.batch_size),
            lr: self.lr.or(other.lr),
            lr_decay: self.lr_decay.or(other.lr_decay),
            rho: self.rho.or(other.rho),
            epsilon: self.epsilon.or(other.epsilon),
            dropout: self.dropout.or(other.dropout),
            clip_norm: self.clip_norm.or(other.clip_norm),
            char_emb: self.char_emb.or(other.char_emb),
            char_hidden: self.char_hidden.or(other.char_hidden),
            ctx_hidden: self.ctx_hidden.or(other.ctx_hidden),
            langid_hidden: self.langid_hidden.or(other.langid_hidden),
            patience: self.patience.or(other.patience),
        }
    }

    /// Training configuration for a run over `num_languages` languages.
    pub fn to_config(&self, num_languages: usize) -> TrainConfig {
        let d = TrainConfig::default();
        let dims_set = self.char_emb.is_some()
            || self.char_hidden.is_some()
            || self.ctx_hidden.is_some()
            || self.langid_hidden.is_some();
        let dims = dims_set.then(|| {
            let full = Dims::full(num_languages);
            Dims {
                char_emb: self.char_emb.unwrap_or(full.char_emb),
                char_hidden: self.char_hidden.unwrap_or(full.char_hidden),
                ctx_hidden: self.ctx_hidden.unwrap_or(full.ctx_hidden),
                langid_hidden: self.langid_hidden.unwrap_or(full.langid_hidden),
            }
        });
        TrainConfig {
            arch: self.arch.unwrap_or(d.arch),
            target_size: self.target_size.map_or(d.target_size, |t| t.0),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr0: self.lr.unwrap_or(d.lr0),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            rho: self.rho.unwrap_or(d.rho),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            dropout: self.dropout.unwrap_or(d.dropout),
            clip_norm: self.clip_norm.unwrap_or(d.clip_norm),
            seed: self.seed.unwrap_or(d.seed),
            dims,
            patience: self.patience.map_or(d.patience, |p| p.0),
            checkpoint: None,
        }
    }
}

/// Flat `key = value` file; `#` starts a comment line.
pub fn read_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("{}:{}: expected key = value", path.display(), n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
