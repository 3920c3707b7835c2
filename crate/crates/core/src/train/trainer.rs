use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use super::loss::{ranknet_loss_node, DEFAULT_SIGMA};
use super::sampling::{BaggingPlan, SampleMode, SampleStream, TripleSource};
use crate::error::{Error, Result};
use crate::model::{DuetV2, ModelConfig, Pass};
use crate::ndgrad::{AdamConfig, AdamState, Scalar};
use crate::rng::DuetRng;
use crate::textpipe::{encode, EmbeddingInit, IdfTable, TermSequence, Triple, Vocabulary};

/// Optimization settings. Architecture lives in [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sigma: f64,
    pub lr: f64,
    pub minibatch_size: usize,
    pub num_minibatches: usize,
    /// Seeds initialization, dropout and sampling.
    pub seed: u64,
    pub sample_mode: SampleMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            lr: 1e-3,
            minibatch_size: 1024,
            num_minibatches: 1024,
            seed: 0,
            sample_mode: SampleMode::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config("minibatch_size must be ≥ 1".into()));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 6] = [
        "sigma",
        "lr",
        "minibatch_size",
        "num_minibatches",
        "seed",
        "sample_mode",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "sigma" => self.sigma = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "minibatch_size" => self.minibatch_size = num(key, value)?,
            "num_minibatches" => self.num_minibatches = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sample_mode" => self.sample_mode = value.parse()?,
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    /// `key = value` lines in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        format!(
            "sigma = {}\nlr = {}\nminibatch_size = {}\nnum_minibatches = {}\nseed = {}\nsample_mode = {}\n",
            self.sigma, self.lr, self.minibatch_size, self.num_minibatches, self.seed, self.sample_mode
        )
    }
}

/// A triple encoded against a vocabulary with the model's caps.
#[derive(Debug, Clone)]
pub struct EncodedTriple {
    pub query: TermSequence,
    pub positive: TermSequence,
    pub negative: TermSequence,
}

/// `None` when any field has no tokens.
pub fn encode_triple(t: &Triple, vocab: &Vocabulary, cfg: &ModelConfig) -> Option<EncodedTriple> {
    let query = encode(&t.query, cfg.query_cap, vocab);
    let positive = encode(&t.positive, cfg.passage_cap, vocab);
    let negative = encode(&t.negative, cfg.passage_cap, vocab);
    if query.is_empty() || positive.is_empty() || negative.is_empty() {
        return None;
    }
    Some(EncodedTriple {
        query,
        positive,
        negative,
    })
}

/// Dropout generator for triple `index` of minibatch `step`. Derived from
/// the position alone so results do not depend on thread scheduling.
pub fn dropout_rng(seed: u64, step: usize, index: usize) -> DuetRng {
    let mut rng = DuetRng::seed_from_u64(splitmix(splitmix(seed) ^ step as u64) ^ index as u64);
    rng.set_stream(crate::rng::RngStream::Dropout as u64);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Loss of one triple and its parameter gradients, added into `grads`.
fn triple_loss_into<T: Scalar>(
    model: &DuetV2<T>,
    t: &EncodedTriple,
    idf: &IdfTable,
    sigma: f64,
    rng: &mut DuetRng,
    grads: Option<&mut [Vec<T>]>,
) -> Result<f64> {
    let mut g = model.graph();
    let mut pass = Pass::training(rng);
    let pos = model.score_pair(&mut g, &t.query, &t.positive, idf, &mut pass)?;
    let neg = model.score_pair(&mut g, &t.query, &t.negative, idf, &mut pass)?;
    let delta = g.sub(pos, neg)?;
    let loss = ranknet_loss_node(&mut g, delta, sigma)?;
    let value = g.scalar(loss)?.as_f64();
    if let Some(grads) = grads {
        let back = g.backward(loss)?;
        for (id, buf) in model.params().ids().zip(grads.iter_mut()) {
            if model.params().get(id).requires_grad {
                back.add_param_grad_into(id, buf, T::one());
            }
        }
    }
    Ok(value)
}

/// Loss sum of one chunk and, when accumulating, its gradient sums.
type ChunkResult<T> = (f64, Option<Vec<Vec<T>>>);

/// Triples per work unit. Fixed so the summation order never depends on the
/// number of threads.
const CHUNK: usize = 16;

/// Mean pairwise loss over `batch` in training mode. With `accumulate`, the
/// gradient of that mean is written into the parameters' accumulators
/// (replacing their contents).
pub fn minibatch_loss<T: Scalar>(
    model: &mut DuetV2<T>,
    batch: &[EncodedTriple],
    idf: &IdfTable,
    sigma: f64,
    seed: u64,
    step: usize,
    accumulate: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.numel()).collect();
    let chunks: Vec<(usize, &[EncodedTriple])> = batch
        .chunks(CHUNK)
        .enumerate()
        .map(|(c, ch)| (c * CHUNK, ch))
        .collect();
    let threads = rayon::current_num_threads().max(1);
    let mut loss_sum = 0.0;
    let mut total: Option<Vec<Vec<T>>> = None;
    let shared: &DuetV2<T> = model;
    for group in chunks.chunks(threads) {
        let results: Vec<Result<ChunkResult<T>>> = group
            .par_iter()
            .map(|&(first, triples)| {
                let mut grads: Option<Vec<Vec<T>>> =
                    accumulate.then(|| sizes.iter().map(|&n| vec![T::zero(); n]).collect());
                let mut sum = 0.0;
                for (k, t) in triples.iter().enumerate() {
                    let mut rng = dropout_rng(seed, step, first + k);
                    sum += triple_loss_into(shared, t, idf, sigma, &mut rng, grads.as_deref_mut())?;
                }
                Ok((sum, grads))
            })
            .collect();
        for r in results {
            let (sum, grads) = r.map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("minibatch {step}: {m}")),
                other => other,
            })?;
            loss_sum += sum;
            if let Some(grads) = grads {
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, &y) in a.iter_mut().zip(g) {
                                *x = *x + y;
                            }
                        }
                    }
                }
            }
        }
    }
    let n = batch.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("minibatch {step}: loss is {loss}")));
    }
    if let Some(total) = total {
        let scale = T::from_f64(1.0 / n);
        for (p, g) in model.params_mut().iter_mut().zip(total) {
            for (dst, v) in p.grad.iter_mut().zip(g) {
                *dst = v * scale;
            }
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Adam updates applied.
    pub optimizer_steps: u64,
    /// Records dropped because a field had no tokens.
    pub skipped_records: u64,
    /// Records short of `minibatch_size × num_minibatches` in one pass over
    /// the source; nonzero means the source was recycled.
    pub shortfall: u64,
    pub wall_ms: u64,
    pub checkpoint: Option<String>,
    pub seed: u64,
}

#[derive(Serialize)]
struct Summary<'a> {
    summary: bool,
    steps: usize,
    optimizer_steps: u64,
    final_loss: Option<f64>,
    skipped_records: u64,
    shortfall: u64,
    wall_ms: u64,
    checkpoint: &'a Option<String>,
    seed: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    /// One JSON object per minibatch, then a summary object.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        let summary = Summary {
            summary: true,
            steps: self.steps.len(),
            optimizer_steps: self.optimizer_steps,
            final_loss: self.final_loss(),
            skipped_records: self.skipped_records,
            shortfall: self.shortfall,
            wall_ms: self.wall_ms,
            checkpoint: &self.checkpoint,
            seed: self.seed,
        };
        serde_json::to_writer(&mut out, &summary)?;
        out.write_all(b"\n")
    }
}

/// Read-only inputs shared by every training run.
#[derive(Clone, Copy)]
pub struct TrainInputs<'a> {
    pub source: &'a dyn TripleSource,
    pub vocab: &'a Vocabulary,
    pub idf: &'a IdfTable,
    pub embeddings: Option<&'a EmbeddingInit>,
}

/// Trains one model with Adam for exactly `num_minibatches` updates.
/// `on_step` sees every step record as it is produced.
pub fn train_model(
    inputs: TrainInputs<'_>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(DuetV2<f32>, TrainReport)> {
    config.validate()?;
    let start = Instant::now();
    let mut mcfg = model_config.clone();
    mcfg.seed = config.seed;
    if mcfg.vocab_size != inputs.vocab.len() {
        return Err(Error::ConfigMismatch(format!(
            "model vocab_size {} but vocabulary has {} ids",
            mcfg.vocab_size,
            inputs.vocab.len()
        )));
    }
    let mut model = DuetV2::<f32>::new(mcfg.clone(), inputs.embeddings)?;
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut stream = SampleStream::new(inputs.source, config.sample_mode, config.seed);
    let mut skipped = 0u64;
    let mut usable_first_pass = 0u64;
    let mut steps = Vec::with_capacity(config.num_minibatches);
    for step in 0..config.num_minibatches {
        let mut batch = Vec::with_capacity(config.minibatch_size);
        while batch.len() < config.minibatch_size {
            let t = stream.next_record()?;
            let first_pass = stream.passes() == 1;
            match encode_triple(&t, inputs.vocab, &mcfg) {
                Some(e) => {
                    if first_pass {
                        usable_first_pass += 1;
                    }
                    batch.push(e);
                }
                None if first_pass => skipped += 1,
                None => {}
            }
            if stream.passes() > 1 && usable_first_pass == 0 {
                return Err(Error::Contract("no usable triples in the source".into()));
            }
        }
        let loss = minibatch_loss(
            &mut model,
            &batch,
            inputs.idf,
            config.sigma,
            config.seed,
            step,
            true,
        )?;
        adam.step(model.params_mut())?;
        let rec = StepRecord {
            step: step + 1,
            loss,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        on_step(&rec);
        steps.push(rec);
    }
    let needed = (config.minibatch_size * config.num_minibatches) as u64;
    let shortfall = if stream.passes() > 1 {
        needed.saturating_sub(usable_first_pass)
    } else {
        0
    };
    let report = TrainReport {
        steps,
        optimizer_steps: adam.step_count(),
        skipped_records: skipped,
        shortfall,
        wall_ms: start.elapsed().as_millis() as u64,
        checkpoint: None,
        seed: config.seed,
    };
    Ok((model, report))
}

/// Trains every member of `plan` on its own seeded view of the source.
/// Members run in parallel on the current rayon pool; results come back in
/// member order.
pub fn train_bagged(
    inputs: TrainInputs<'_>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    plan: &BaggingPlan,
) -> Result<Vec<(DuetV2<f32>, TrainReport)>> {
    plan.members
        .par_iter()
        .map(|m| {
            let cfg = TrainConfig {
                seed: m.seed,
                sample_mode: plan.mode,
                ..config.clone()
            };
            train_model(inputs, model_config, &cfg, |_| {})
        })
        .collect()
}
