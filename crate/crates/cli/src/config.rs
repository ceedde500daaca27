//! Flat `key=value` run configuration.

use std::path::PathBuf;
use std::str::FromStr;

use rau_core::trainer::{EarlyStopMode, TrainConfig};

use crate::CliError;

/// Every setting of a training run. Keys are listed in [`Config::KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    /// `S`: subtask, attended-feature and memory width.
    pub hidden: usize,
    /// `A`: attention projection width.
    pub attention: usize,
    /// `H_q`: question LSTM width.
    pub question_hidden: usize,
    /// `D_w`: word embedding width.
    pub word_dim: usize,
    /// `G`: grid side; must match the dataset.
    pub grid: usize,
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            train: TrainConfig::default(),
            hidden: 64,
            attention: 32,
            question_hidden: 32,
            word_dim: 32,
            grid: 4,
            data: PathBuf::from("data"),
            out: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::config(key, format!("cannot parse `{value}`")))
}

impl Config {
    pub const KEYS: [&'static str; 23] = [
        "k",
        "lr_encoder",
        "lr_answering",
        "lr_decay",
        "clip_norm",
        "dropout_rate",
        "noise_eta",
        "t_min",
        "t_max",
        "lambda",
        "val_drop_threshold",
        "saturation_patience",
        "batch_size",
        "seed",
        "early_stop",
        "train_eval_size",
        "hidden",
        "attention",
        "question_hidden",
        "word_dim",
        "grid",
        "data",
        "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "k" => t.k = parse(key, value)?,
            "lr_encoder" => t.lr_encoder = parse(key, value)?,
            "lr_answering" => t.lr_answering = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse(key, value)?,
            "dropout_rate" => t.dropout_rate = parse(key, value)?,
            "noise_eta" => t.noise_eta = parse(key, value)?,
            "t_min" => t.t_min = parse(key, value)?,
            "t_max" => t.t_max = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "val_drop_threshold" => t.val_drop_threshold = parse(key, value)?,
            "saturation_patience" => t.saturation_patience = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "early_stop" => t.early_stop = value.parse::<EarlyStopMode>()?,
            "train_eval_size" => t.train_eval_size = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "attention" => self.attention = parse(key, value)?,
            "question_hidden" => self.question_hidden = parse(key, value)?,
            "word_dim" => self.word_dim = parse(key, value)?,
            "grid" => self.grid = parse(key, value)?,
            "data" => self.data = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            _ => return Err(CliError::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "k" => t.k.to_string(),
            "lr_encoder" => t.lr_encoder.to_string(),
            "lr_answering" => t.lr_answering.to_string(),
            "lr_decay" => t.lr_decay.to_string(),
            "clip_norm" => t.clip_norm.to_string(),
            "dropout_rate" => t.dropout_rate.to_string(),
            "noise_eta" => t.noise_eta.to_string(),
            "t_min" => t.t_min.to_string(),
            "t_max" => t.t_max.to_string(),
            "lambda" => t.lambda.to_string(),
            "val_drop_threshold" => t.val_drop_threshold.to_string(),
            "saturation_patience" => t.saturation_patience.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "seed" => t.seed.to_string(),
            "early_stop" => t.early_stop.to_string(),
            "train_eval_size" => t.train_eval_size.to_string(),
            "hidden" => self.hidden.to_string(),
            "attention" => self.attention.to_string(),
            "question_hidden" => self.question_hidden.to_string(),
            "word_dim" => self.word_dim.to_string(),
            "grid" => self.grid.to_string(),
            "data" => self.data.display().to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key=value, got `{raw}`", n + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the file's values, then `overrides` in order.
    pub fn resolve(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut c = Config::default();
        if let Some(text) = file_text {
            c.apply_text(text)?;
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        for (key, v) in [
            ("hidden", self.hidden),
            ("attention", self.attention),
            ("question_hidden", self.question_hidden),
            ("word_dim", self.word_dim),
        ] {
            if v == 0 {
                return Err(CliError::config(key, "must be positive"));
            }
        }
        if self.grid < 2 {
            return Err(CliError::config("grid", "must be at least 2"));
        }
        Ok(())
    }

    /// One `key=value` line per key, in [`Config::KEYS`] order.
    pub fn effective(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Usage(format!("expected key=value, got `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::resolve(Some(""), &[]).unwrap(), Config::default());
    }

    #[test]
    fn flags_beat_file() {
        let c = Config::resolve(Some("k=4\n"), &[("k".into(), "2".into())]).unwrap();
        assert_eq!(c.train.k, 2);
    }

    #[test]
    fn inverted_range_names_both_keys() {
        let err = Config::resolve(Some("t_min=10\nt_max=5"), &[]).unwrap_err().to_string();
        assert!(err.contains("t_min") && err.contains("t_max"), "{err}");
    }

    #[test]
    fn unknown_and_unparsable_keys_are_named() {
        let e = Config::resolve(Some("colour=red"), &[]).unwrap_err().to_string();
        assert!(e.contains("colour"), "{e}");
        let e = Config::resolve(None, &[("k".into(), "four".into())]).unwrap_err().to_string();
        assert!(e.contains("`k`"), "{e}");
    }

    #[test]
    fn effective_roundtrips() {
        let mut c = Config::default();
        c.apply_text("k=3\nlr_answering=0.002 # comment\nearly_stop=formula\ndata=/x/y").unwrap();
        let back = Config::resolve(Some(&c.effective()), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.effective().lines().count(), Config::KEYS.len());
    }
}
