use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BlockKind, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Ordered, uniquely named set of parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter name {name}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn by_index(&self, i: usize) -> (&str, &Tensor) {
        let (n, t) = &self.entries[i];
        (n, t)
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Same names, same order, same shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {na} {:?} vs {nb} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform Xavier/Glorot.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Normal {
        std: f64,
    },
}

/// Where parameters come from when a model layout is walked: fresh
/// initialization, or binding stored tensors onto a tape.
pub trait ParamSource {
    type Handle;
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Self::Handle>;
}

pub struct Initializer<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub store: ParamStore,
}

impl ParamSource for Initializer<'_> {
    type Handle = ();

    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-a..a)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                (0..n).map(|_| dist.sample(self.rng)).collect()
            }
        };
        self.store.push(name, Tensor::new(shape, data)?)
    }
}

/// Places stored tensors on a tape, checking them against the layout.
pub struct Binder<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub requires_grad: bool,
    pub bound: Vec<Var>,
}

impl ParamSource for Binder<'_> {
    type Handle = Var;

    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Var> {
        let i = self.bound.len();
        if i >= self.store.len() {
            return Err(Error::Checkpoint(format!("missing parameter {name}")));
        }
        let (stored_name, value) = self.store.by_index(i);
        if stored_name != name || value.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "expected {name} {shape:?}, found {stored_name} {:?}",
                value.shape()
            )));
        }
        let v = self.tape.leaf(value.clone(), self.requires_grad);
        self.bound.push(v);
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct Linear<P> {
    /// `in×out`
    pub weight: P,
    pub bias: P,
}

#[derive(Debug, Clone)]
pub struct Norm<P> {
    pub gamma: P,
    pub beta: P,
}

#[derive(Debug, Clone)]
pub struct MhsaParams<P> {
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    pub output: Linear<P>,
}

/// Extra TCM parameters: the shared `d→D` head-token projection and the
/// optional `H×D` head-token embedding.
#[derive(Debug, Clone)]
pub struct HeadTokenParams<P> {
    pub proj: Linear<P>,
    pub embedding: Option<P>,
}

#[derive(Debug, Clone)]
pub struct AttentionParams<P> {
    pub mhsa: MhsaParams<P>,
    pub head_tokens: Option<HeadTokenParams<P>>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardParams<P> {
    pub norm: Norm<P>,
    pub up: Linear<P>,
    pub down: Linear<P>,
}

#[derive(Debug, Clone)]
pub struct ConvModuleParams<P> {
    pub norm: Norm<P>,
    /// `D→2D`, halves gated by GLU.
    pub pointwise_in: Linear<P>,
    /// `K×D`
    pub depthwise: P,
    pub depthwise_bias: P,
    /// Stands in for the batch norm of the usual Conformer conv module.
    pub depthwise_norm: Norm<P>,
    pub pointwise_out: Linear<P>,
}

#[derive(Debug, Clone)]
pub struct ConformerParams<P> {
    pub ffn1: FeedForwardParams<P>,
    pub attn_norm: Norm<P>,
    pub attention: AttentionParams<P>,
    pub conv: ConvModuleParams<P>,
    pub ffn2: FeedForwardParams<P>,
    pub final_norm: Norm<P>,
}

#[derive(Debug, Clone)]
pub struct TransformerParams<P> {
    pub attn_norm: Norm<P>,
    pub attention: AttentionParams<P>,
    /// Its `norm` is the block's second pre-norm.
    pub ffn: FeedForwardParams<P>,
}

#[derive(Debug, Clone)]
pub enum BlockParams<P> {
    Conformer(ConformerParams<P>),
    Transformer(TransformerParams<P>),
}

impl<P> BlockParams<P> {
    pub fn attention(&self) -> &AttentionParams<P> {
        match self {
            BlockParams::Conformer(c) => &c.attention,
            BlockParams::Transformer(t) => &t.attention,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierParams<P> {
    pub input: Linear<P>,
    pub cls: P,
    pub blocks: Vec<BlockParams<P>>,
    pub head: Linear<P>,
}

pub(crate) fn linear<S: ParamSource>(
    src: &mut S,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<Linear<S::Handle>> {
    Ok(Linear {
        weight: src.param(
            &format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::Xavier { fan_in, fan_out },
        )?,
        bias: src.param(&format!("{name}.bias"), &[fan_out], Init::Zeros)?,
    })
}

pub(crate) fn norm<S: ParamSource>(src: &mut S, name: &str, dim: usize) -> Result<Norm<S::Handle>> {
    Ok(Norm {
        gamma: src.param(&format!("{name}.gamma"), &[dim], Init::Ones)?,
        beta: src.param(&format!("{name}.beta"), &[dim], Init::Zeros)?,
    })
}

pub(crate) fn mhsa<S: ParamSource>(src: &mut S, name: &str, dim: usize) -> Result<MhsaParams<S::Handle>> {
    Ok(MhsaParams {
        query: linear(src, &format!("{name}.query"), dim, dim)?,
        key: linear(src, &format!("{name}.key"), dim, dim)?,
        value: linear(src, &format!("{name}.value"), dim, dim)?,
        output: linear(src, &format!("{name}.output"), dim, dim)?,
    })
}

pub(crate) fn attention<S: ParamSource>(
    src: &mut S,
    name: &str,
    cfg: &ModelConfig,
) -> Result<AttentionParams<S::Handle>> {
    let dim = cfg.model_dim;
    let mhsa = mhsa(src, &format!("{name}.mhsa"), dim)?;
    let head_tokens = if cfg.toggles.use_tcm {
        let proj = linear(src, &format!("{name}.head_proj"), cfg.head_dim(), dim)?;
        let embedding = if cfg.toggles.ht_embedding {
            Some(src.param(
                &format!("{name}.head_embedding"),
                &[cfg.heads, dim],
                Init::Normal { std: 0.02 },
            )?)
        } else {
            None
        };
        Some(HeadTokenParams { proj, embedding })
    } else {
        None
    };
    Ok(AttentionParams { mhsa, head_tokens })
}

fn feed_forward<S: ParamSource>(src: &mut S, name: &str, cfg: &ModelConfig) -> Result<FeedForwardParams<S::Handle>> {
    let (d, h) = (cfg.model_dim, cfg.model_dim * cfg.ffn_expansion);
    Ok(FeedForwardParams {
        norm: norm(src, &format!("{name}.norm"), d)?,
        up: linear(src, &format!("{name}.up"), d, h)?,
        down: linear(src, &format!("{name}.down"), h, d)?,
    })
}

fn conv_module<S: ParamSource>(src: &mut S, name: &str, cfg: &ModelConfig) -> Result<ConvModuleParams<S::Handle>> {
    let (d, k) = (cfg.model_dim, cfg.conv_kernel);
    Ok(ConvModuleParams {
        norm: norm(src, &format!("{name}.norm"), d)?,
        pointwise_in: linear(src, &format!("{name}.pointwise_in"), d, 2 * d)?,
        depthwise: src.param(
            &format!("{name}.depthwise.kernel"),
            &[k, d],
            Init::Xavier { fan_in: k, fan_out: k },
        )?,
        depthwise_bias: src.param(&format!("{name}.depthwise.bias"), &[d], Init::Zeros)?,
        depthwise_norm: norm(src, &format!("{name}.depthwise_norm"), d)?,
        pointwise_out: linear(src, &format!("{name}.pointwise_out"), d, d)?,
    })
}

pub(crate) fn block<S: ParamSource>(src: &mut S, name: &str, cfg: &ModelConfig) -> Result<BlockParams<S::Handle>> {
    let d = cfg.model_dim;
    Ok(match cfg.block_kind {
        BlockKind::Conformer => BlockParams::Conformer(ConformerParams {
            ffn1: feed_forward(src, &format!("{name}.ffn1"), cfg)?,
            attn_norm: norm(src, &format!("{name}.attn_norm"), d)?,
            attention: attention(src, &format!("{name}.attn"), cfg)?,
            conv: conv_module(src, &format!("{name}.conv"), cfg)?,
            ffn2: feed_forward(src, &format!("{name}.ffn2"), cfg)?,
            final_norm: norm(src, &format!("{name}.final_norm"), d)?,
        }),
        BlockKind::Transformer => BlockParams::Transformer(TransformerParams {
            attn_norm: norm(src, &format!("{name}.attn_norm"), d)?,
            attention: attention(src, &format!("{name}.attn"), cfg)?,
            ffn: feed_forward(src, &format!("{name}.ffn"), cfg)?,
        }),
    })
}

/// Walks the full classifier layout in a fixed order.
pub fn classifier_layout<S: ParamSource>(src: &mut S, cfg: &ModelConfig) -> Result<ClassifierParams<S::Handle>> {
    cfg.validate()?;
    let d = cfg.model_dim;
    let input = linear(src, "input", cfg.feature_dim, d)?;
    let cls = src.param("cls", &[d], Init::Normal { std: 0.02 })?;
    let blocks = (0..cfg.blocks)
        .map(|i| block(src, &format!("blocks.{i}"), cfg))
        .collect::<Result<Vec<_>>>()?;
    let head = linear(src, "head", d, 2)?;
    Ok(ClassifierParams {
        input,
        cls,
        blocks,
        head,
    })
}

/// Counts scalars without allocating tensors.
pub(crate) struct Counter(pub usize);

impl ParamSource for Counter {
    type Handle = ();

    fn param(&mut self, _name: &str, shape: &[usize], _init: Init) -> Result<()> {
        self.0 += shape.iter().product::<usize>();
        Ok(())
    }
}
