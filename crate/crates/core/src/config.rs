//! Flat `key=value` run configuration covering every tunable default.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. The
//! printed form lists every key in a fixed order and parses back to the
//! same value.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dsp::MfccConfig;
use crate::error::{Error, Result};
use crate::gcn::GcnTrainConfig;
use crate::hubert::{FinetuneConfig, PretrainConfig};

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Shared by every stochastic step.
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Input checkpoint for fine-tuning and scoring.
    pub checkpoint: Option<PathBuf>,
    pub gcn: GcnTrainConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub mfcc: MfccConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse("config", format!("bad value {value:?} for {key}")))
}

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::new(7)
    }
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        let mut c = Self {
            seed,
            manifest: None,
            embeddings: None,
            checkpoint: None,
            gcn: GcnTrainConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            mfcc: MfccConfig::default(),
        };
        c.set_seed(seed);
        c
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.gcn.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
    }

    /// Every key with its current value, in print order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        fn s(v: impl Display) -> String {
            v.to_string()
        }
        let (g, p, f, m) = (&self.gcn, &self.pretrain, &self.finetune, &self.mfcc);
        vec![
            ("seed", s(self.seed)),
            ("manifest", path_value(&self.manifest)),
            ("embeddings", path_value(&self.embeddings)),
            ("checkpoint", path_value(&self.checkpoint)),
            ("gcn.embedding_dim", s(g.dims.input)),
            ("gcn.hidden", s(g.dims.hidden)),
            ("gcn.order", s(g.dims.order)),
            ("gcn.max_epochs", s(g.max_epochs)),
            ("gcn.patience", s(g.patience)),
            ("gcn.learning_rate", s(g.learning_rate)),
            ("gcn.batch_size", s(g.batch_size)),
            ("hubert.model_dim", s(p.encoder.model_dim)),
            ("hubert.layers", s(p.encoder.layers)),
            ("hubert.heads", s(p.encoder.heads)),
            ("hubert.ffn_dim", s(p.encoder.ffn_dim)),
            ("hubert.proj_dim", s(p.encoder.proj_dim)),
            ("hubert.temperature", s(p.encoder.temperature)),
            ("hubert.positional", s(p.encoder.positional)),
            ("hubert.units", s(p.units)),
            ("hubert.iterations", s(p.iterations)),
            ("hubert.steps", s(p.steps)),
            ("hubert.batch_size", s(p.batch_size)),
            ("hubert.learning_rate", s(p.learning_rate)),
            ("hubert.mask_span", s(p.mask.span_len)),
            ("hubert.mask_coverage", s(p.mask.target_coverage)),
            ("finetune.max_epochs", s(f.max_epochs)),
            ("finetune.patience", s(f.patience)),
            ("finetune.batch_size", s(f.batch_size)),
            ("finetune.encoder_lr", s(f.encoder_lr)),
            ("finetune.head_lr", s(f.head_lr)),
            ("mfcc.frame_ms", s(m.frame_ms)),
            ("mfcc.hop_ms", s(m.hop_ms)),
            ("mfcc.mel_filters", s(m.mel_filters)),
            ("mfcc.num_ceps", s(m.num_ceps)),
            ("mfcc.deltas", s(m.include_deltas)),
            ("mfcc.log_floor", s(m.log_floor)),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "seed" => self.set_seed(parse(k, v)?),
            "manifest" => self.manifest = opt_path(v),
            "embeddings" => self.embeddings = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "gcn.embedding_dim" => self.gcn.dims.input = parse(k, v)?,
            "gcn.hidden" => self.gcn.dims.hidden = parse(k, v)?,
            "gcn.order" => self.gcn.dims.order = parse(k, v)?,
            "gcn.max_epochs" => self.gcn.max_epochs = parse(k, v)?,
            "gcn.patience" => self.gcn.patience = parse(k, v)?,
            "gcn.learning_rate" => self.gcn.learning_rate = parse(k, v)?,
            "gcn.batch_size" => self.gcn.batch_size = parse(k, v)?,
            "hubert.model_dim" => self.pretrain.encoder.model_dim = parse(k, v)?,
            "hubert.layers" => self.pretrain.encoder.layers = parse(k, v)?,
            "hubert.heads" => self.pretrain.encoder.heads = parse(k, v)?,
            "hubert.ffn_dim" => self.pretrain.encoder.ffn_dim = parse(k, v)?,
            "hubert.proj_dim" => self.pretrain.encoder.proj_dim = parse(k, v)?,
            "hubert.temperature" => self.pretrain.encoder.temperature = parse(k, v)?,
            "hubert.positional" => self.pretrain.encoder.positional = parse(k, v)?,
            "hubert.units" => self.pretrain.units = parse(k, v)?,
            "hubert.iterations" => self.pretrain.iterations = parse(k, v)?,
            "hubert.steps" => self.pretrain.steps = parse(k, v)?,
            "hubert.batch_size" => self.pretrain.batch_size = parse(k, v)?,
            "hubert.learning_rate" => self.pretrain.learning_rate = parse(k, v)?,
            "hubert.mask_span" => self.pretrain.mask.span_len = parse(k, v)?,
            "hubert.mask_coverage" => self.pretrain.mask.target_coverage = parse(k, v)?,
            "finetune.max_epochs" => self.finetune.max_epochs = parse(k, v)?,
            "finetune.patience" => self.finetune.patience = parse(k, v)?,
            "finetune.batch_size" => self.finetune.batch_size = parse(k, v)?,
            "finetune.encoder_lr" => self.finetune.encoder_lr = parse(k, v)?,
            "finetune.head_lr" => self.finetune.head_lr = parse(k, v)?,
            "mfcc.frame_ms" => self.mfcc.frame_ms = parse(k, v)?,
            "mfcc.hop_ms" => self.mfcc.hop_ms = parse(k, v)?,
            "mfcc.mel_filters" => self.mfcc.mel_filters = parse(k, v)?,
            "mfcc.num_ceps" => self.mfcc.num_ceps = parse(k, v)?,
            "mfcc.deltas" => self.mfcc.include_deltas = parse(k, v)?,
            "mfcc.log_floor" => self.mfcc.log_floor = parse(k, v)?,
            _ => {
                return Err(Error::parse("config", format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse("config", format!("line {}: expected key=value", i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::parse("config", format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.gcn.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.mfcc.validate()
    }

    /// Writes the resolved configuration as `config.txt` under `dir`.
    pub fn save_beside(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl std::fmt::Display for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
