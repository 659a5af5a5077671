//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use crate::model::{DecodeMode, ModelConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_size: usize,
    pub decode: DecodeMode,
    pub train_corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab_size: 8000,
            decode: DecodeMode::Greedy,
            train_corpus: None,
            dev_corpus: None,
            test_corpus: None,
            output_dir: None,
            checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

/// Keys written by [`RunConfig::to_text`] that fully describe the model.
pub const MODEL_KEYS: [&str; 12] = [
    "hidden",
    "heads",
    "enc_layers",
    "dec_layers",
    "ffn_dim",
    "max_len",
    "dropout",
    "position_mode",
    "appearance_dim",
    "layout",
    "rel_max_distance",
    "vocab_size",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        let path = || Some(PathBuf::from(value));
        match key {
            "hidden" => m.hidden = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "enc_layers" => m.enc_layers = parse(key, value)?,
            "dec_layers" => m.dec_layers = parse(key, value)?,
            "ffn_dim" => m.ffn_dim = parse(key, value)?,
            "max_len" => m.max_len = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "position_mode" => m.position_mode = value.parse()?,
            "appearance_dim" => m.appearance_dim = parse(key, value)?,
            "layout" => m.layout = parse(key, value)?,
            "rel_max_distance" => m.rel_max_distance = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "gamma_sal" => t.gamma_sal = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "label_smooth_pos" => t.label_smooth_pos = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "max_answer_len" => t.max_answer_len = parse(key, value)?,
            "decode" => self.decode = value.parse()?,
            "train_corpus" => self.train_corpus = path(),
            "dev_corpus" => self.dev_corpus = path(),
            "test_corpus" => self.test_corpus = path(),
            "output_dir" => self.output_dir = path(),
            "checkpoint" => self.checkpoint = path(),
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{source}:{}: expected key = value", n + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("{source}:{}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// A `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), String> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("override {assignment:?} is not key=value"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.vocab_size <= crate::serializer::NUM_RESERVED {
            return Err(format!(
                "vocab_size must exceed {}",
                crate::serializer::NUM_RESERVED
            ));
        }
        Ok(())
    }

    /// Model and training settings; paths are left out.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let decode = match self.decode {
            DecodeMode::Greedy => "greedy".to_string(),
            DecodeMode::Beam(k) => format!("beam:{k}"),
        };
        let lines = [
            ("hidden", m.hidden.to_string()),
            ("heads", m.heads.to_string()),
            ("enc_layers", m.enc_layers.to_string()),
            ("dec_layers", m.dec_layers.to_string()),
            ("ffn_dim", m.ffn_dim.to_string()),
            ("max_len", m.max_len.to_string()),
            ("dropout", m.dropout.to_string()),
            ("position_mode", m.position_mode.to_string()),
            ("appearance_dim", m.appearance_dim.to_string()),
            ("layout", m.layout.to_string()),
            ("rel_max_distance", m.rel_max_distance.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("gamma_sal", t.gamma_sal.to_string()),
            ("lr", t.lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("label_smooth_pos", t.label_smooth_pos.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("max_answer_len", t.max_answer_len.to_string()),
            ("decode", decode),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
