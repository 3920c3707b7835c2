use rand::{Rng, RngCore};

use super::config::{Activation, Combiner, ModelConfig};
use super::interaction::{build_interaction_matrix, InteractionMatrix};
use crate::error::{Error, Result};
use crate::ndgrad::{Axis, Graph, NodeId, Padding, ParamId, ParamSet, Scalar, Tensor};
use crate::rng::{stream_rng, RngStream};
use crate::textpipe::{EmbeddingInit, IdfTable, TermSequence, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Embedding,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn dense(specs: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.w"),
        shape: vec![fan_in, fan_out],
        init: Init::Glorot { fan_in, fan_out },
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b"),
        shape: vec![fan_out],
        init: Init::Zeros,
    });
}

fn conv(specs: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig) {
    let (h, e, w) = (cfg.hidden, cfg.embed_dim, cfg.conv_width);
    specs.push(ParamSpec {
        name: format!("{prefix}.w"),
        shape: vec![h, e, w],
        init: Init::Glorot {
            fan_in: e * w,
            fan_out: h * w,
        },
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b"),
        shape: vec![h],
        init: Init::Zeros,
    });
}

/// Every parameter of the model in layout order.
fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let h = cfg.hidden;
    let mut s = Vec::new();
    let table = |name: &str| ParamSpec {
        name: name.into(),
        shape: vec![cfg.vocab_size, cfg.embed_dim],
        init: Init::Embedding,
    };
    if cfg.split_embeddings {
        s.push(table("embedding.query"));
        s.push(table("embedding.passage"));
    } else {
        s.push(table("embedding"));
    }
    dense(&mut s, "local.proj", cfg.passage_cap, h);
    dense(&mut s, "local.fc1", cfg.query_cap * h, h);
    dense(&mut s, "local.fc2", h, h);
    conv(&mut s, "dist.query_conv", cfg);
    dense(&mut s, "dist.query_fc", h, h);
    conv(&mut s, "dist.passage_conv", cfg);
    dense(&mut s, "dist.passage_fc", h, h);
    dense(&mut s, "dist.fc1", cfg.passage_windows() * h, h);
    dense(&mut s, "dist.fc2", h, h);
    match cfg.combiner {
        Combiner::Mlp => {
            dense(&mut s, "comb.fc1", 2 * h, h);
            dense(&mut s, "comb.fc2", h, h);
            dense(&mut s, "comb.out", h, 1);
        }
        Combiner::Linear => {
            dense(&mut s, "comb.local_head", h, 1);
            dense(&mut s, "comb.dist_head", h, 1);
            s.push(ParamSpec {
                name: "comb.mix".into(),
                shape: vec![2, 1],
                init: Init::Ones,
            });
        }
    }
    s
}

/// Exact number of learnable scalars for `cfg`.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg)
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum()
}

/// Learnable scalars in the embedding table(s) alone.
pub fn embedding_parameter_count(cfg: &ModelConfig) -> usize {
    let tables = if cfg.split_embeddings { 2 } else { 1 };
    tables * cfg.vocab_size * cfg.embed_dim
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum Head {
    Mlp {
        fc1: Dense,
        fc2: Dense,
        out: Dense,
    },
    Linear {
        local: Dense,
        dist: Dense,
        mix: ParamId,
    },
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    emb_query: ParamId,
    emb_passage: ParamId,
    local_proj: Dense,
    local_fc1: Dense,
    local_fc2: Dense,
    query_conv: Dense,
    query_fc: Dense,
    passage_conv: Dense,
    passage_fc: Dense,
    dist_fc1: Dense,
    dist_fc2: Dense,
    head: Head,
}

impl Layout {
    fn resolve<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>) -> Result<Self> {
        let find = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("missing parameter {name:?}")))
        };
        let dense = |prefix: &str| -> Result<Dense> {
            Ok(Dense {
                w: find(&format!("{prefix}.w"))?,
                b: find(&format!("{prefix}.b"))?,
            })
        };
        let (emb_query, emb_passage) = if cfg.split_embeddings {
            (find("embedding.query")?, find("embedding.passage")?)
        } else {
            let e = find("embedding")?;
            (e, e)
        };
        let head = match cfg.combiner {
            Combiner::Mlp => Head::Mlp {
                fc1: dense("comb.fc1")?,
                fc2: dense("comb.fc2")?,
                out: dense("comb.out")?,
            },
            Combiner::Linear => Head::Linear {
                local: dense("comb.local_head")?,
                dist: dense("comb.dist_head")?,
                mix: find("comb.mix")?,
            },
        };
        Ok(Self {
            emb_query,
            emb_passage,
            local_proj: dense("local.proj")?,
            local_fc1: dense("local.fc1")?,
            local_fc2: dense("local.fc2")?,
            query_conv: dense("dist.query_conv")?,
            query_fc: dense("dist.query_fc")?,
            passage_conv: dense("dist.passage_conv")?,
            passage_fc: dense("dist.passage_fc")?,
            dist_fc1: dense("dist.fc1")?,
            dist_fc2: dense("dist.fc2")?,
            head,
        })
    }
}

/// Forward-pass mode. Training passes draw dropout masks from the supplied
/// generator; inference passes are deterministic.
pub struct Pass<'r> {
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Pass<'r> {
    pub fn inference() -> Self {
        Self { rng: None }
    }

    pub fn training(rng: &'r mut dyn RngCore) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }
}

/// The Duet v2 scoring model: parameters plus the configuration that shaped
/// them.
#[derive(Debug, Clone)]
pub struct DuetV2<T: Scalar> {
    config: ModelConfig,
    params: ParamSet<T>,
    layout: Layout,
}

impl<T: Scalar> DuetV2<T> {
    /// Fresh model. Embedding rows come from `embeddings` when given (its
    /// shape must match the config), otherwise they are drawn at random.
    pub fn new(config: ModelConfig, embeddings: Option<&EmbeddingInit>) -> Result<Self> {
        config.validate()?;
        let random_init;
        let emb = match embeddings {
            Some(e) => {
                if e.dim != config.embed_dim || e.vocab_size() != config.vocab_size {
                    return Err(Error::ConfigMismatch(format!(
                        "embedding init is {}×{}, model expects {}×{}",
                        e.vocab_size(),
                        e.dim,
                        config.vocab_size,
                        config.embed_dim
                    )));
                }
                e
            }
            None => {
                random_init =
                    EmbeddingInit::random(config.vocab_size, config.embed_dim, config.seed);
                &random_init
            }
        };
        let mut rng = stream_rng(config.seed, RngStream::Weights);
        let mut params = ParamSet::new();
        for spec in param_specs(&config) {
            let numel: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Embedding => emb.table.iter().map(|&v| T::from_f64(v as f64)).collect(),
                Init::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..numel)
                        .map(|_| T::from_f64(rng.random_range(-a..=a)))
                        .collect()
                }
                Init::Zeros => vec![T::zero(); numel],
                Init::Ones => vec![T::one(); numel],
            };
            params.add(spec.name, Tensor::new(spec.shape, data)?)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set, checking names and shapes against
    /// the layout `config` implies.
    pub fn from_params(config: ModelConfig, mut params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "config implies {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, p) in specs.iter().zip(params.iter()) {
            if spec.name != p.name || spec.shape != p.value.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {:?} {:?} does not match expected {:?} {:?}",
                    p.name,
                    p.value.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            if !p.value.all_finite() {
                return Err(Error::Numeric(format!(
                    "parameter {:?} is not finite",
                    p.name
                )));
            }
        }
        let layout = Layout::resolve(&config, &params)?;
        for id in [layout.emb_query, layout.emb_passage] {
            params.set_requires_grad(id, !config.freeze_embeddings);
        }
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn cast<U: Scalar>(&self) -> DuetV2<U> {
        DuetV2 {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout,
        }
    }

    /// Graph bound to this model's parameters.
    pub fn graph(&self) -> Graph<'_, T> {
        Graph::with_params(&self.params)
    }

    fn activate(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        match self.config.activation {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }

    /// Activation followed by dropout.
    fn hidden(&self, g: &mut Graph<'_, T>, x: NodeId, pass: &mut Pass<'_>) -> Result<NodeId> {
        let a = self.activate(g, x)?;
        match pass.rng.as_deref_mut() {
            Some(rng) => g.dropout(a, self.config.dropout, true, rng),
            None => Ok(a),
        }
    }

    fn linear(&self, g: &mut Graph<'_, T>, x: NodeId, d: Dense) -> Result<NodeId> {
        let w = g.param(d.w)?;
        let b = g.param(d.b)?;
        g.linear(x, w, b)
    }

    fn mlp2(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        fc1: Dense,
        fc2: Dense,
        pass: &mut Pass<'_>,
    ) -> Result<NodeId> {
        let h = self.linear(g, x, fc1)?;
        let h = self.hidden(g, h, pass)?;
        let h = self.linear(g, h, fc2)?;
        self.hidden(g, h, pass)
    }

    /// Local sub-model over a `query_cap × passage_cap` interaction matrix.
    /// Returns a `1 × hidden` node.
    pub fn local_forward(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        pass: &mut Pass<'_>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        if g.shape(x) != [cfg.query_cap, cfg.passage_cap] {
            return Err(Error::dim(format!(
                "interaction matrix is {:?}, expected [{}, {}]",
                g.shape(x),
                cfg.query_cap,
                cfg.passage_cap
            )));
        }
        let rows = self.linear(g, x, self.layout.local_proj)?;
        let rows = self.hidden(g, rows, pass)?;
        let flat = g.reshape(rows, &[1, cfg.query_cap * cfg.hidden])?;
        self.mlp2(g, flat, self.layout.local_fc1, self.layout.local_fc2, pass)
    }

    /// Embedding, convolution and activation: `hidden × cap`.
    fn conv_stack(
        &self,
        g: &mut Graph<'_, T>,
        table: ParamId,
        conv: Dense,
        seq: &TermSequence,
        pass: &mut Pass<'_>,
    ) -> Result<NodeId> {
        let ids: Vec<usize> = seq.ids().iter().map(|&i| i as usize).collect();
        let table = g.param(table)?;
        let emb = g.embedding_gather_padded(table, &ids, Some(PAD_ID as usize))?;
        let emb = g.transpose(emb)?;
        let k = g.param(conv.w)?;
        let b = g.param(conv.b)?;
        let c = g.conv1d(emb, k, Padding::Same)?;
        let c = g.add_bias(c, b, Axis::Rows)?;
        self.hidden(g, c, pass)
    }

    /// Distributed sub-model over query and passage ids. Returns a
    /// `1 × hidden` node.
    pub fn distributed_forward(
        &self,
        g: &mut Graph<'_, T>,
        q: &TermSequence,
        p: &TermSequence,
        pass: &mut Pass<'_>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        self.check_caps(q, p)?;
        let l = &self.layout;

        let qc = self.conv_stack(g, l.emb_query, l.query_conv, q, pass)?;
        let qv = g.max_pool_masked(qc, cfg.query_cap, 1, q.len())?;
        let qv = g.transpose(qv)?;
        let qv = self.linear(g, qv, l.query_fc)?;

        let pc = self.conv_stack(g, l.emb_passage, l.passage_conv, p, pass)?;
        let pw = g.max_pool_masked(pc, cfg.pool_window, 1, p.len())?;
        let pw = g.transpose(pw)?;
        let pw = self.linear(g, pw, l.passage_fc)?;

        let windows = cfg.passage_windows();
        let qb = g.broadcast_rows(qv, windows)?;
        let matched = g.mul(qb, pw)?;
        let flat = g.reshape(matched, &[1, windows * cfg.hidden])?;
        self.mlp2(g, flat, l.dist_fc1, l.dist_fc2, pass)
    }

    /// Combines the two `1 × hidden` sub-model vectors into a `1 × 1` score.
    pub fn combine_and_score(
        &self,
        g: &mut Graph<'_, T>,
        local: NodeId,
        dist: NodeId,
        pass: &mut Pass<'_>,
    ) -> Result<NodeId> {
        let h = self.config.hidden;
        for v in [local, dist] {
            if g.shape(v) != [1, h] {
                return Err(Error::dim(format!(
                    "sub-model vector is {:?}, expected [1, {h}]",
                    g.shape(v)
                )));
            }
        }
        match self.layout.head {
            Head::Mlp { fc1, fc2, out } => {
                let x = g.concat(&[local, dist], 1)?;
                let x = self.mlp2(g, x, fc1, fc2, pass)?;
                self.linear(g, x, out)
            }
            Head::Linear {
                local: lh,
                dist: dh,
                mix,
            } => {
                let ls = self.linear(g, local, lh)?;
                let ds = self.linear(g, dist, dh)?;
                let both = g.concat(&[ls, ds], 1)?;
                let m = g.param(mix)?;
                g.matmul(both, m)
            }
        }
    }

    fn check_caps(&self, q: &TermSequence, p: &TermSequence) -> Result<()> {
        let cfg = &self.config;
        if q.capacity() != cfg.query_cap || p.capacity() != cfg.passage_cap {
            return Err(Error::dim(format!(
                "sequences encoded with caps {}×{}, model expects {}×{}",
                q.capacity(),
                p.capacity(),
                cfg.query_cap,
                cfg.passage_cap
            )));
        }
        Ok(())
    }

    pub fn interaction(
        &self,
        q: &TermSequence,
        p: &TermSequence,
        idf: &IdfTable,
    ) -> InteractionMatrix {
        build_interaction_matrix(q, p, idf, self.config.idf_weighting)
    }

    /// Full score node for one query–passage pair.
    pub fn score_pair(
        &self,
        g: &mut Graph<'_, T>,
        q: &TermSequence,
        p: &TermSequence,
        idf: &IdfTable,
        pass: &mut Pass<'_>,
    ) -> Result<NodeId> {
        self.check_caps(q, p)?;
        let x = g.input(self.interaction(q, p, idf).to_tensor())?;
        let local = self.local_forward(g, x, pass)?;
        let dist = self.distributed_forward(g, q, p, pass)?;
        self.combine_and_score(g, local, dist, pass)
    }

    /// Inference-mode score.
    pub fn score(&self, q: &TermSequence, p: &TermSequence, idf: &IdfTable) -> Result<T> {
        let mut g = self.graph();
        let s = self.score_pair(&mut g, q, p, idf, &mut Pass::inference())?;
        g.scalar(s)
    }
}
