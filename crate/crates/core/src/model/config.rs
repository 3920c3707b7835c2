use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::textpipe::{DEFAULT_VOCAB_CAP, PASSAGE_CAP, QUERY_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    /// Two hidden layers over the concatenated sub-model vectors.
    Mlp,
    /// One scalar head per sub-model, mixed by two learned weights.
    Linear,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combiner::Mlp => "mlp",
            Combiner::Linear => "linear",
        })
    }
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Combiner::Mlp),
            "linear" => Ok(Combiner::Linear),
            _ => Err(Error::Config(format!("unknown combiner {s:?}"))),
        }
    }
}

/// Architecture and regularization settings. Everything needed to rebuild
/// the parameter layout is here, so it is stored in every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub query_cap: usize,
    pub passage_cap: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Including PAD and UNK.
    pub vocab_size: usize,
    pub activation: Activation,
    pub combiner: Combiner,
    pub idf_weighting: bool,
    pub dropout: f64,
    pub conv_width: usize,
    pub pool_window: usize,
    pub seed: u64,
    /// Separate query and passage embedding tables.
    pub split_embeddings: bool,
    pub freeze_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            query_cap: QUERY_CAP,
            passage_cap: PASSAGE_CAP,
            hidden: 300,
            embed_dim: 300,
            vocab_size: DEFAULT_VOCAB_CAP + 2,
            activation: Activation::Relu,
            combiner: Combiner::Mlp,
            idf_weighting: true,
            dropout: 0.5,
            conv_width: 3,
            pool_window: 100,
            seed: 0,
            split_embeddings: false,
            freeze_embeddings: false,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for gradient checks and toy runs.
    pub fn tiny() -> Self {
        Self {
            query_cap: 4,
            passage_cap: 8,
            hidden: 5,
            embed_dim: 4,
            vocab_size: 10,
            pool_window: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("query_cap", self.query_cap),
            ("passage_cap", self.passage_cap),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("conv_width", self.conv_width),
            ("pool_window", self.pool_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        if self.vocab_size < 3 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room for content terms",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.pool_window > self.passage_cap {
            return Err(Error::Config(format!(
                "pool_window {} exceeds passage_cap {}",
                self.pool_window, self.passage_cap
            )));
        }
        Ok(())
    }

    /// Number of passage windows after pooling.
    pub fn passage_windows(&self) -> usize {
        self.passage_cap - self.pool_window + 1
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    fn entries(&self) -> Vec<(String, String)> {
        let on_off = |b: bool| if b { "on" } else { "off" }.to_string();
        vec![
            ("query_cap".into(), self.query_cap.to_string()),
            ("passage_cap".into(), self.passage_cap.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("activation".into(), self.activation.to_string()),
            ("combiner".into(), self.combiner.to_string()),
            ("idf_weighting".into(), on_off(self.idf_weighting)),
            ("dropout".into(), self.dropout.to_string()),
            ("conv_width".into(), self.conv_width.to_string()),
            ("pool_window".into(), self.pool_window.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("split_embeddings".into(), on_off(self.split_embeddings)),
            ("freeze_embeddings".into(), on_off(self.freeze_embeddings)),
        ]
    }

    /// Sets one field from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<N: FromStr>(key: &str, v: &str) -> Result<N> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                _ => Err(Error::Config(format!(
                    "{key}: expected on or off, got {v:?}"
                ))),
            }
        }
        match key {
            "query_cap" => self.query_cap = num(key, value)?,
            "passage_cap" => self.passage_cap = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "activation" => self.activation = value.parse()?,
            "combiner" => self.combiner = value.parse()?,
            "idf_weighting" => self.idf_weighting = flag(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "conv_width" => self.conv_width = num(key, value)?,
            "pool_window" => self.pool_window = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "split_embeddings" => self.split_embeddings = flag(key, value)?,
            "freeze_embeddings" => self.freeze_embeddings = flag(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value",
                i + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig::tiny();
        cfg.activation = Activation::Tanh;
        cfg.combiner = Combiner::Linear;
        cfg.idf_weighting = false;
        cfg.dropout = 0.25;
        cfg.seed = 99;
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_defaults() {
        let cfg = ModelConfig::from_text("# toy\nhidden = 7 # small\n\n").unwrap();
        assert_eq!(cfg.hidden, 7);
        assert_eq!(cfg.embed_dim, 300);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ModelConfig::from_text("dropout = 1.0").is_err());
        assert!(ModelConfig::from_text("hidden = 0").is_err());
        assert!(ModelConfig::from_text("colour = red").is_err());
        assert!(ModelConfig::from_text("pool_window = 500").is_err());
        assert!(ModelConfig::from_text("hidden 5").is_err());
    }
}
