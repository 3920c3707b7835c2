//! Record sources and the per-model views of them used for bagging.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, DuetRng, RngStream};
use crate::textpipe::{Triple, TriplesReader};

/// Records per shuffle block.
pub const SHUFFLE_BLOCK: usize = 64 * 1024;

/// Triples split into fixed-size blocks that can be read in any order.
pub trait TripleSource: Sync {
    fn block_count(&self) -> usize;
    fn read_block(&self, index: usize) -> Result<Vec<Triple>>;
}

pub struct MemorySource {
    triples: Vec<Triple>,
    block_size: usize,
}

impl MemorySource {
    /// One block holding everything, so shuffles are global.
    pub fn new(triples: Vec<Triple>) -> Self {
        let block_size = triples.len().max(1);
        Self {
            triples,
            block_size,
        }
    }

    pub fn with_block_size(triples: Vec<Triple>, block_size: usize) -> Self {
        Self {
            triples,
            block_size: block_size.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

impl TripleSource for MemorySource {
    fn block_count(&self) -> usize {
        self.triples.len().div_ceil(self.block_size)
    }

    fn read_block(&self, index: usize) -> Result<Vec<Triple>> {
        let start = index * self.block_size;
        let end = (start + self.block_size).min(self.triples.len());
        Ok(self.triples[start..end].to_vec())
    }
}

/// A triples file indexed by the byte offset of every block start. Indexing
/// reads the file once; blocks are then read on demand.
pub struct FileSource {
    path: PathBuf,
    offsets: Vec<u64>,
    block_size: usize,
}

impl FileSource {
    pub fn index(path: &Path, block_size: usize) -> Result<Self> {
        let block_size = block_size.max(1);
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut offsets = Vec::new();
        let mut pos = 0u64;
        let mut in_block = 0;
        let mut line = Vec::new();
        loop {
            line.clear();
            let n = reader
                .read_until(b'\n', &mut line)
                .map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            if line.iter().any(|b| !b.is_ascii_whitespace()) {
                if in_block == 0 {
                    offsets.push(pos);
                }
                in_block = (in_block + 1) % block_size;
            }
            pos += n as u64;
        }
        Ok(Self {
            path: path.to_path_buf(),
            offsets,
            block_size,
        })
    }
}

impl TripleSource for FileSource {
    fn block_count(&self) -> usize {
        self.offsets.len()
    }

    fn read_block(&self, index: usize) -> Result<Vec<Triple>> {
        let mut file = File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        file.seek(SeekFrom::Start(self.offsets[index]))
            .map_err(|e| Error::io(&self.path, e))?;
        let name = format!("{} (block {index})", self.path.display());
        TriplesReader::new(BufReader::new(file), name)
            .take(self.block_size)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Blocks and records in source order.
    Sequential,
    /// Blocks in a seeded random order, records shuffled within each block.
    Shuffle,
    /// Like `Shuffle`, but each record is repeated a Poisson(1) number of
    /// times, which approximates sampling with replacement.
    Bootstrap,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(SampleMode::Sequential),
            "shuffle" => Ok(SampleMode::Shuffle),
            "bootstrap" => Ok(SampleMode::Bootstrap),
            _ => Err(Error::Config(format!("unknown sample mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for SampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SampleMode::Sequential => "sequential",
            SampleMode::Shuffle => "shuffle",
            SampleMode::Bootstrap => "bootstrap",
        })
    }
}

/// Endless record stream over a source. When the source is exhausted a new
/// pass starts (with a fresh block order for the random modes).
pub struct SampleStream<'a> {
    source: &'a dyn TripleSource,
    mode: SampleMode,
    rng: DuetRng,
    order: Vec<usize>,
    next_block: usize,
    buffer: VecDeque<Triple>,
    passes: usize,
    read_this_pass: usize,
}

impl<'a> SampleStream<'a> {
    pub fn new(source: &'a dyn TripleSource, mode: SampleMode, seed: u64) -> Self {
        Self {
            source,
            mode,
            rng: stream_rng(seed, RngStream::Shuffle),
            order: Vec::new(),
            next_block: 0,
            buffer: VecDeque::new(),
            passes: 0,
            read_this_pass: 0,
        }
    }

    /// Passes started so far; more than one means the source was recycled.
    pub fn passes(&self) -> usize {
        self.passes
    }

    fn start_pass(&mut self) -> Result<()> {
        if self.passes > 0 && self.read_this_pass == 0 {
            return Err(Error::Contract("triples source yielded no records".into()));
        }
        self.order = (0..self.source.block_count()).collect();
        if self.mode != SampleMode::Sequential {
            self.order.shuffle(&mut self.rng);
        }
        self.next_block = 0;
        self.passes += 1;
        self.read_this_pass = 0;
        Ok(())
    }

    pub fn next_record(&mut self) -> Result<Triple> {
        loop {
            if let Some(t) = self.buffer.pop_front() {
                return Ok(t);
            }
            if self.next_block >= self.order.len() {
                self.start_pass()?;
                if self.order.is_empty() {
                    return Err(Error::Contract("triples source is empty".into()));
                }
            }
            let mut block = self.source.read_block(self.order[self.next_block])?;
            self.next_block += 1;
            self.read_this_pass += block.len();
            match self.mode {
                SampleMode::Sequential => {}
                SampleMode::Shuffle => block.shuffle(&mut self.rng),
                SampleMode::Bootstrap => {
                    block.shuffle(&mut self.rng);
                    let poisson = Poisson::new(1.0).expect("rate 1 is valid");
                    let mut out = Vec::with_capacity(block.len());
                    for t in block {
                        let k = poisson.sample(&mut self.rng) as usize;
                        out.extend(std::iter::repeat_n(t, k));
                    }
                    block = out;
                }
            }
            self.buffer.extend(block);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BagMember {
    pub index: usize,
    pub seed: u64,
}

/// Seeds and sampling mode for an ensemble of independently trained models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaggingPlan {
    pub members: Vec<BagMember>,
    pub mode: SampleMode,
}

pub const DEFAULT_BAG_SIZE: usize = 8;

/// Model `k` gets seed `base_seed + k`, which also seeds its view of the data.
pub fn make_bagging_plan(
    num_models: usize,
    base_seed: u64,
    mode: SampleMode,
) -> Result<BaggingPlan> {
    if num_models == 0 {
        return Err(Error::Parameter("bagging needs at least one model".into()));
    }
    Ok(BaggingPlan {
        members: (0..num_models)
            .map(|k| BagMember {
                index: k,
                seed: base_seed.wrapping_add(k as u64),
            })
            .collect(),
        mode,
    })
}
