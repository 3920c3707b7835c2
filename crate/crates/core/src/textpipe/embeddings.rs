use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, RngStream};

/// Half-width of the uniform range for rows without a pretrained vector.
pub const EMBEDDING_INIT_RANGE: f32 = 0.05;

/// Initial embedding table, one row per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingInit {
    pub dim: usize,
    /// Row-major `vocab_size × dim`.
    pub table: Vec<f32>,
    /// Content terms whose row came from the pretrained file.
    pub covered: usize,
}

impl EmbeddingInit {
    /// All rows random except PAD, which is zero.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        Self::fill(vocab_size, dim, seed, |_| None)
    }

    fn fill(
        vocab_size: usize,
        dim: usize,
        seed: u64,
        mut pretrained: impl FnMut(usize) -> Option<Vec<f32>>,
    ) -> Self {
        let mut rng = stream_rng(seed, RngStream::Embedding);
        let mut table = Vec::with_capacity(vocab_size * dim);
        let mut covered = 0;
        for id in 0..vocab_size {
            if id == PAD_ID as usize {
                table.extend(std::iter::repeat_n(0.0, dim));
            } else if let Some(row) = pretrained(id) {
                covered += 1;
                table.extend(row);
            } else {
                table.extend(
                    (0..dim)
                        .map(|_| rng.random_range(-EMBEDDING_INIT_RANGE..=EMBEDDING_INIT_RANGE)),
                );
            }
        }
        Self {
            dim,
            table,
            covered,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.len() / self.dim.max(1)
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.table[id * self.dim..(id + 1) * self.dim]
    }
}

/// Reads a pretrained text file (`token v1 … v_dim` per line) and builds the
/// initial table for `vocab`. Rows for covered terms are copied verbatim;
/// UNK and uncovered terms are drawn uniformly in ±0.05 from `seed`.
pub fn read_embedding_init<R: BufRead>(
    reader: R,
    source_name: &str,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingInit> {
    if dim == 0 {
        return Err(Error::Parameter("embedding dimension must be ≥ 1".into()));
    }
    let mut rows: Vec<Option<Vec<f32>>> = vec![None; vocab.len()];
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::format(source_name, line_no, e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (token, values) =
            split_vector_line(line, dim).map_err(|m| Error::format(source_name, line_no, m))?;
        let Some(id) = vocab.get(&token) else {
            continue;
        };
        if seen.insert(id) {
            rows[id as usize] = Some(values);
        }
    }
    Ok(EmbeddingInit::fill(vocab.len(), dim, seed, |id| {
        rows[id].take()
    }))
}

/// Splits a vector line into token and exactly `dim` floats. Tokens may
/// contain spaces as long as none of their pieces parse as a number.
fn split_vector_line(line: &str, dim: usize) -> std::result::Result<(String, Vec<f32>), String> {
    let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
    if fields.len() < dim + 1 {
        return Err(format!(
            "expected a token and {dim} values, found {} values",
            fields.len().saturating_sub(1)
        ));
    }
    let split = fields.len() - dim;
    if split > 1 && fields[1..split].iter().any(|f| f.parse::<f32>().is_ok()) {
        return Err(format!("expected {dim} values, found {}", fields.len() - 1));
    }
    let values = fields[split..]
        .iter()
        .map(|f| {
            f.parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad value {f:?}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((fields[..split].join(" "), values))
}

pub fn load_embedding_init(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingInit> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embedding_init(
        BufReader::new(file),
        &path.display().to_string(),
        vocab,
        dim,
        seed,
    )
}
