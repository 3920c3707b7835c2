//! Training settings from defaults, DUETRANK_SEED, a config file and flags,
//! later sources winning.

use duet_core::model::{parse_key_values, ModelConfig};
use duet_core::train::{SampleMode, TrainConfig};
use duet_core::{Error, Result};

pub const SEED_ENV: &str = "DUETRANK_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bagging: usize,
    pub jobs: usize,
    sample_mode_given: bool,
    vocab_size_given: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            bagging: 1,
            jobs: 1,
            sample_mode_given: false,
            vocab_size_given: false,
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let count = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::Config(format!("{key}: expected an integer ≥ 1, got {v:?}")))
        };
        match key {
            "bagging" => self.bagging = count(value)?,
            "jobs" => self.jobs = count(value)?,
            "seed" => {
                self.train.set(key, value)?;
                self.model.set(key, value)?;
            }
            k if TrainConfig::KEYS.contains(&k) => {
                self.train.set(key, value)?;
                self.sample_mode_given |= key == "sample_mode";
            }
            _ => {
                self.model.set(key, value)?;
                self.vocab_size_given |= key == "vocab_size";
            }
        }
        Ok(())
    }

    /// Fills in the vocabulary size, failing if the settings named a
    /// different one.
    pub fn bind_vocabulary(&mut self, vocab_size: usize) -> Result<()> {
        if self.vocab_size_given && self.model.vocab_size != vocab_size {
            return Err(Error::ConfigMismatch(format!(
                "settings give vocab_size {}, vocabulary has {vocab_size} ids",
                self.model.vocab_size
            )));
        }
        self.model.vocab_size = vocab_size;
        self.model.validate()
    }

    /// Effective settings as `key = value` lines.
    pub fn to_text(&self) -> String {
        let model: String = self
            .model
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("seed "))
            .map(|l| format!("{l}\n"))
            .collect();
        format!(
            "{model}{}bagging = {}\njobs = {}\n",
            self.train.to_text(),
            self.bagging,
            self.jobs
        )
    }
}

/// Maps command-line flags to setting keys. Flags not listed here (paths)
/// are not settings.
pub fn flag_setting(flag: &str, value: &str) -> Option<(&'static str, String)> {
    let key = match flag {
        "batch_size" => "minibatch_size",
        "minibatches" => "num_minibatches",
        "lr" => "lr",
        "sigma" => "sigma",
        "seed" => "seed",
        "sample_mode" => "sample_mode",
        "query_cap" => "query_cap",
        "passage_cap" => "passage_cap",
        "hidden" => "hidden",
        "embed_dim" => "embed_dim",
        "dropout" => "dropout",
        "conv_width" => "conv_width",
        "pool_window" => "pool_window",
        "bagging" => "bagging",
        "jobs" => "jobs",
        "no_idf" => return Some(("idf_weighting", "off".into())),
        "tanh" => return Some(("activation", "tanh".into())),
        "linear_combine" => return Some(("combiner", "linear".into())),
        "split_embeddings" => return Some(("split_embeddings", "on".into())),
        "freeze_embeddings" => return Some(("freeze_embeddings", "on".into())),
        _ => return None,
    };
    Some((key, value.to_string()))
}

pub fn resolve(
    config_file: Option<(&str, &str)>,
    env_seed: Option<&str>,
    flags: &[(&str, String)],
) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(seed) = env_seed {
        s.set("seed", seed.trim())
            .map_err(|_| Error::Config(format!("{SEED_ENV}: cannot parse {seed:?}")))?;
    }
    if let Some((name, text)) = config_file {
        for (key, value) in parse_key_values(text)? {
            s.set(&key, &value)
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
    }
    for (key, value) in flags {
        s.set(key, value)?;
    }
    if s.bagging > 1 && !s.sample_mode_given {
        s.train.sample_mode = SampleMode::Shuffle;
    }
    s.model.seed = s.train.seed;
    s.train.validate()?;
    Ok(s)
}
