//! Piecewise convolutional sentence encoder.
//!
//! An instance becomes a `|X| × d` matrix of word and relative-position
//! embeddings (`d = word_dim + 2·position_dim`), is convolved with `m`
//! filters of width `window`, max-pooled separately over the three segments
//! cut by the two entities, squashed with `tanh`, dropped out during
//! training, and projected to `K` true-label logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{Instance, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const WORD_EMBEDDING: &str = "encoder.word_embedding";
pub const HEAD_POSITION: &str = "encoder.head_position";
pub const TAIL_POSITION: &str = "encoder.tail_position";
pub const FILTERS: &str = "encoder.filters";
pub const FILTER_BIAS: &str = "encoder.filter_bias";
pub const PROJECTION: &str = "encoder.projection";
pub const PROJECTION_BIAS: &str = "encoder.projection_bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub window: usize,
    pub filters: usize,
    pub word_dim: usize,
    pub position_dim: usize,
    pub max_len: usize,
    pub position_clip: usize,
    pub dropout_rate: f64,
    pub relations: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            window: 3,
            filters: 230,
            word_dim: 50,
            position_dim: 5,
            max_len: 100,
            position_clip: 100,
            dropout_rate: 0.5,
            relations: 53,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.window == 0 || self.filters == 0 || self.word_dim == 0 || self.position_dim == 0 {
            return bad("window, filter count and embedding sizes must be positive".into());
        }
        if self.max_len < self.window {
            return bad(format!(
                "max_len {} shorter than window {}",
                self.max_len, self.window
            ));
        }
        if self.position_clip == 0 {
            return bad("position_clip must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} not in [0,1)", self.dropout_rate));
        }
        if self.relations < 2 {
            return bad(format!("need K >= 2 relations, got {}", self.relations));
        }
        Ok(())
    }

    /// Width of one embedded token row.
    pub fn input_dim(&self) -> usize {
        self.word_dim + 2 * self.position_dim
    }

    /// Length of the pooled sentence vector.
    pub fn hidden_dim(&self) -> usize {
        3 * self.filters
    }

    fn position_rows(&self) -> usize {
        2 * self.position_clip + 1
    }
}

/// Handles of the encoder's tensors inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub word_embedding: ParamId,
    pub head_position: ParamId,
    pub tail_position: ParamId,
    pub filters: ParamId,
    pub filter_bias: ParamId,
    pub projection: ParamId,
    pub projection_bias: ParamId,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

impl EncoderParams {
    /// Registers freshly initialized encoder tensors. Word vectors are copied
    /// from `vocab`; filters and projection use Glorot-uniform bounds.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab: &Vocabulary,
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.dim() != config.word_dim {
            return Err(Error::EmbeddingDim {
                expected: config.word_dim,
                found: vocab.dim(),
            });
        }
        let d = config.input_dim();
        let (m, l, k) = (config.filters, config.window, config.relations);
        let pos = [config.position_rows(), config.position_dim];
        let filter_bound = (6.0 / (l * d + m) as f64).sqrt();
        let proj_bound = (6.0 / (3 * m + k) as f64).sqrt();
        Ok(Self {
            word_embedding: store.add(WORD_EMBEDDING, vocab.embeddings.clone())?,
            head_position: store.add(HEAD_POSITION, uniform(rng, &pos, 0.25))?,
            tail_position: store.add(TAIL_POSITION, uniform(rng, &pos, 0.25))?,
            filters: store.add(FILTERS, uniform(rng, &[m, l * d], filter_bound))?,
            filter_bias: store.add(FILTER_BIAS, Tensor::zeros(&[m]))?,
            projection: store.add(PROJECTION, uniform(rng, &[k, 3 * m], proj_bound))?,
            projection_bias: store.add(PROJECTION_BIAS, Tensor::zeros(&[k]))?,
        })
    }

    /// Looks the encoder tensors up by name and checks their shapes.
    pub fn from_store(store: &ParamStore, config: &EncoderConfig) -> Result<Self> {
        let get = |name: &str, shape: Option<Vec<usize>>| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if let Some(s) = shape {
                if store.value(id).shape() != s.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "encoder parameter",
                        left: s,
                        right: store.value(id).shape().to_vec(),
                    });
                }
            }
            Ok(id)
        };
        let d = config.input_dim();
        let (m, l, k) = (config.filters, config.window, config.relations);
        let pos = vec![config.position_rows(), config.position_dim];
        let word_embedding = get(WORD_EMBEDDING, None)?;
        if store.value(word_embedding).shape()[1] != config.word_dim {
            return Err(Error::EmbeddingDim {
                expected: config.word_dim,
                found: store.value(word_embedding).shape()[1],
            });
        }
        Ok(Self {
            word_embedding,
            head_position: get(HEAD_POSITION, Some(pos.clone()))?,
            tail_position: get(TAIL_POSITION, Some(pos))?,
            filters: get(FILTERS, Some(vec![m, l * d]))?,
            filter_bias: get(FILTER_BIAS, Some(vec![m]))?,
            projection: get(PROJECTION, Some(vec![k, 3 * m]))?,
            projection_bias: get(PROJECTION_BIAS, Some(vec![k]))?,
        })
    }
}

/// An instance reduced to the indices the encoder consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedInstance {
    pub token_ids: Vec<usize>,
    pub head_positions: Vec<usize>,
    pub tail_positions: Vec<usize>,
    /// Index of the last head token.
    pub head_last: usize,
    /// Index of the last tail token.
    pub tail_last: usize,
}

impl PreparedInstance {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

fn clip_offset(offset: isize, clip: usize) -> usize {
    let c = clip as isize;
    (offset.clamp(-c, c) + c) as usize
}

/// Relative distance of every token to the head and tail start, clipped to
/// `[-clip, clip]` and shifted into table indices `[0, 2·clip]`.
pub fn relative_positions(instance: &Instance, clip: usize) -> (Vec<usize>, Vec<usize>) {
    positions_for(
        instance.tokens.len(),
        instance.head.start,
        instance.tail.start,
        clip,
    )
}

fn positions_for(
    len: usize,
    head_start: usize,
    tail_start: usize,
    clip: usize,
) -> (Vec<usize>, Vec<usize>) {
    (0..len)
        .map(|i| {
            let i = i as isize;
            (
                clip_offset(i - head_start as isize, clip),
                clip_offset(i - tail_start as isize, clip),
            )
        })
        .unzip()
}

/// Maps tokens to indices, truncates to `max_len` and pads to the window
/// width. Truncation that would cut an entity rejects the instance.
pub fn prepare(
    instance: &Instance,
    vocab: &Vocabulary,
    config: &EncoderConfig,
) -> Result<PreparedInstance> {
    let entity_end = instance.head.end.max(instance.tail.end);
    if entity_end > config.max_len {
        return Err(Error::Rejected(format!(
            "entity ends at token {entity_end}, beyond max_len {}",
            config.max_len
        )));
    }
    let mut token_ids: Vec<usize> = instance
        .tokens
        .iter()
        .take(config.max_len)
        .map(|t| vocab.lookup(t))
        .collect();
    while token_ids.len() < config.window {
        token_ids.push(PAD);
    }
    let (head_positions, tail_positions) = positions_for(
        token_ids.len(),
        instance.head.start,
        instance.tail.start,
        config.position_clip,
    );
    Ok(PreparedInstance {
        token_ids,
        head_positions,
        tail_positions,
        head_last: instance.head.end - 1,
        tail_last: instance.tail.end - 1,
    })
}

/// Embedded input matrix as a graph node.
pub fn embed_graph(g: &mut Graph, x: &PreparedInstance, params: &EncoderParams) -> Result<Var> {
    let words = g.gather(params.word_embedding, &x.token_ids, Some(PAD))?;
    let head = g.gather(params.head_position, &x.head_positions, None)?;
    let tail = g.gather(params.tail_position, &x.tail_positions, None)?;
    g.concat_cols(&[words, head, tail])
}

/// Row `i` is `[word vector : head-position vector : tail-position vector]`.
pub fn embed(x: &PreparedInstance, store: &ParamStore, params: &EncoderParams) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let v = embed_graph(&mut g, x, params)?;
    Tensor::new(g.shape(v).to_vec(), g.value(v).to_vec())
}

/// Valid convolution of `input` (`n × d`) with `filters` (`m × window·d`);
/// returns the `m × (n − window + 1)` feature maps.
pub fn convolve(input: &Tensor, filters: &Tensor, bias: &Tensor, window: usize) -> Result<Tensor> {
    let (&[n, d], &[m, fw]) = (input.shape(), filters.shape()) else {
        return Err(Error::ShapeMismatch {
            op: "convolve",
            left: input.shape().to_vec(),
            right: filters.shape().to_vec(),
        });
    };
    if window == 0 || fw != window * d || n < window || bias.shape() != [m] {
        return Err(Error::ShapeMismatch {
            op: "convolve",
            left: input.shape().to_vec(),
            right: filters.shape().to_vec(),
        });
    }
    let out = kernels::conv1d(input.data(), d, filters.data(), bias.data(), window);
    Tensor::new(vec![m, n - window + 1], out)
}

/// Max-pools every feature map over `[0, b1]`, `(b1, b2]`, `(b2, end)`,
/// where `b1 ≤ b2` are the sorted boundaries clamped to the map. Output is
/// `3m` values as per-filter triples; empty segments give 0.
pub fn piecewise_max_pool(features: &Tensor, head_last: usize, tail_last: usize) -> Result<Tensor> {
    let &[m, n] = features.shape() else {
        return Err(Error::ShapeMismatch {
            op: "piecewise_max_pool",
            left: vec![0, 0],
            right: features.shape().to_vec(),
        });
    };
    let (values, _) = kernels::piecewise_max(features.data(), m, n, head_last, tail_last);
    Tensor::new(vec![3 * m], values)
}

/// Dropout behaviour of one encoder pass.
pub enum DropoutMode<'r, R: Rng + ?Sized> {
    Off,
    /// Fresh masks drawn from the given stream.
    Sample(&'r mut R),
    /// Fixed, already scaled mask over the `3m` hidden units.
    Frozen(Vec<f64>),
}

/// True-label logits `h` (length `K`) as a graph node.
pub fn encode_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    x: &PreparedInstance,
    params: &EncoderParams,
    config: &EncoderConfig,
    dropout: DropoutMode<'_, R>,
) -> Result<Var> {
    let input = embed_graph(g, x, params)?;
    let filters = g.param(params.filters);
    let bias = g.param(params.filter_bias);
    let features = g.conv1d(input, filters, bias, config.window)?;
    let pooled = g.piecewise_max(features, x.head_last, x.tail_last)?;
    let hidden = g.tanh(pooled);
    let hidden = match dropout {
        DropoutMode::Off => hidden,
        DropoutMode::Sample(rng) => g.dropout(hidden, config.dropout_rate, rng)?,
        DropoutMode::Frozen(mask) => g.dropout_with_mask(hidden, mask)?,
    };
    let w = g.param(params.projection);
    let b = g.param(params.projection_bias);
    g.affine(w, hidden, b)
}

/// Inference-mode logits for one instance.
pub fn encode(
    x: &PreparedInstance,
    store: &ParamStore,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<Vec<f64>> {
    let mut g = Graph::new(store);
    let h = encode_graph::<rand_chacha::ChaCha8Rng>(&mut g, x, params, config, DropoutMode::Off)?;
    Ok(g.value(h).to_vec())
}
