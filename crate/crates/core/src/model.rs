//! A complete relation extractor: encoder, transition column, vocabulary
//! and schema, with checkpoint persistence.

use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint;
use crate::data::{Bag, RelationSchema, Vocabulary};
use crate::encoder::{self, DropoutMode, EncoderConfig, EncoderParams, PreparedInstance};
use crate::error::{Error, Result};
use crate::kernels::softmax;
use crate::noise::{self, StructuredTransition, TRANSITION};
use crate::params::{ParamId, ParamStore};

pub const VOCAB_FILE: &str = "vocab.txt";

/// Bags larger than this are truncated before training.
pub const MAX_BAG_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    encoder: EncoderConfig,
    relations: Vec<String>,
    phase: Phase,
}

/// A bag with its sentences already mapped to encoder indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBag {
    pub head_id: String,
    pub tail_id: String,
    /// Observed label index (training bags).
    pub label: Option<usize>,
    pub instances: Vec<PreparedInstance>,
    /// Observed label of every sentence.
    pub observed: Vec<usize>,
    /// Planted sentence truth, when the corpus has it.
    pub truth: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: EncoderConfig,
    pub schema: RelationSchema,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub transition: ParamId,
    pub phase: Phase,
}

impl Model {
    /// Fresh model with the transition column at the identity.
    pub fn new(
        config: EncoderConfig,
        schema: RelationSchema,
        vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        if config.relations != schema.len() {
            return Err(Error::RelationCountMismatch {
                expected: schema.len(),
                found: config.relations,
            });
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::register(&mut store, &vocab, &config, &mut rng)?;
        let identity = StructuredTransition::identity(config.relations);
        let transition = store.add(TRANSITION, crate::tensor::Tensor::vector(identity.column))?;
        store.set_trainable(transition, false);
        Ok(Self {
            config,
            schema,
            vocab,
            store,
            encoder,
            transition,
            phase: Phase::Pretrain,
        })
    }

    pub fn k(&self) -> usize {
        self.schema.len()
    }

    pub fn transition_matrix(&self) -> StructuredTransition {
        StructuredTransition {
            column: self.store.value(self.transition).data().to_vec(),
            trainable: self.store.is_trainable(self.transition),
        }
    }

    pub fn set_transition(&mut self, column: &[f64], trainable: bool) -> Result<()> {
        if column.len() != self.k() {
            return Err(Error::RelationCountMismatch {
                expected: self.k(),
                found: column.len(),
            });
        }
        self.store
            .value_mut(self.transition)
            .data_mut()
            .copy_from_slice(column);
        self.store.set_trainable(self.transition, trainable);
        Ok(())
    }

    /// Maps bags to encoder input. Sentences whose entities lie beyond
    /// `max_len` are dropped (and counted); bags left empty are dropped.
    pub fn prepare_bags(&self, bags: &[Bag]) -> Result<(Vec<PreparedBag>, usize)> {
        let mut out = Vec::with_capacity(bags.len());
        let mut rejected = 0;
        for bag in bags {
            let label = match &bag.label {
                Some(l) => Some(self.schema.index(l).ok_or_else(|| Error::UnknownRelation {
                    line: 0,
                    label: l.clone(),
                })?),
                None => None,
            };
            let mut prepared = PreparedBag {
                head_id: bag.head_id.clone(),
                tail_id: bag.tail_id.clone(),
                label,
                instances: Vec::with_capacity(bag.len()),
                observed: Vec::with_capacity(bag.len()),
                truth: Vec::with_capacity(bag.len()),
            };
            for inst in &bag.instances {
                match encoder::prepare(inst, &self.vocab, &self.config) {
                    Ok(x) => {
                        let idx = |l: &str| {
                            self.schema.index(l).ok_or_else(|| Error::UnknownRelation {
                                line: 0,
                                label: l.to_string(),
                            })
                        };
                        prepared.observed.push(idx(&inst.relation)?);
                        prepared
                            .truth
                            .push(inst.true_relation.as_deref().map(idx).transpose()?);
                        prepared.instances.push(x);
                    }
                    Err(Error::Rejected(msg)) => {
                        warn!("{}/{}: {msg}", bag.head_id, bag.tail_id);
                        rejected += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if prepared.instances.len() > MAX_BAG_SIZE {
                warn!(
                    "bag {}/{} has {} sentences; truncating to {MAX_BAG_SIZE}",
                    bag.head_id,
                    bag.tail_id,
                    prepared.instances.len()
                );
                prepared.instances.truncate(MAX_BAG_SIZE);
                prepared.observed.truncate(MAX_BAG_SIZE);
                prepared.truth.truncate(MAX_BAG_SIZE);
            }
            if !prepared.instances.is_empty() {
                out.push(prepared);
            }
        }
        Ok((out, rejected))
    }

    /// True-label logits of one sentence, dropout off.
    pub fn logits(&self, x: &PreparedInstance) -> Result<Vec<f64>> {
        encoder::encode(x, &self.store, &self.encoder, &self.config)
    }

    /// `softmax(h)` for every sentence of a bag.
    pub fn true_distributions(&self, bag: &PreparedBag) -> Result<Vec<Vec<f64>>> {
        bag.instances
            .iter()
            .map(|x| Ok(softmax(&self.logits(x)?)))
            .collect()
    }

    /// Per-bag sentence distributions. With `threads > 1` bags are encoded
    /// in parallel; the result does not depend on the thread count.
    pub fn predict_bags(&self, bags: &[PreparedBag], threads: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        if threads <= 1 {
            return bags.iter().map(|b| self.true_distributions(b)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            bags.par_iter()
                .map(|b| self.true_distributions(b))
                .collect()
        })
    }

    /// Bag loss over `bags` as a graph node. Dropout masks are drawn from
    /// `rng` when given.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        bags: &[&PreparedBag],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut encoded = Vec::with_capacity(bags.len());
        for bag in bags {
            let label = bag.label.ok_or_else(|| {
                Error::Degenerate(format!("bag {}/{} has no label", bag.head_id, bag.tail_id))
            })?;
            let mut logits = Vec::with_capacity(bag.instances.len());
            for x in &bag.instances {
                let mode = match rng.as_deref_mut() {
                    Some(r) => DropoutMode::Sample(r),
                    None => DropoutMode::Off,
                };
                logits.push(encoder::encode_graph(
                    g,
                    x,
                    &self.encoder,
                    &self.config,
                    mode,
                )?);
            }
            encoded.push((label, logits));
        }
        noise::bag_loss_graph(g, self.transition, &encoded)
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        let meta = ModelMeta {
            encoder: self.config.clone(),
            relations: self.schema.labels().to_vec(),
            phase: self.phase,
        };
        let extra = serde_json::to_value(&meta).map_err(|e| Error::json(dir, e))?;
        checkpoint::save(dir, &self.store, seed, extra)?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, manifest) = checkpoint::load(dir)?;
        let meta: ModelMeta = serde_json::from_value(manifest.extra)
            .map_err(|e| Error::json(dir.join(checkpoint::MANIFEST), e))?;
        let schema = RelationSchema::new(meta.relations)?;
        let config = meta.encoder;
        if config.relations != schema.len() {
            return Err(Error::RelationCountMismatch {
                expected: schema.len(),
                found: config.relations,
            });
        }
        let vocab = Vocabulary::load_tokens(&dir.join(VOCAB_FILE), config.word_dim)?;
        let encoder = EncoderParams::from_store(&store, &config)?;
        let rows = store.value(encoder.word_embedding).shape()[0];
        if rows != vocab.len() {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} tokens but embedding table has {rows} rows",
                vocab.len()
            )));
        }
        let transition = store
            .id(TRANSITION)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {TRANSITION}")))?;
        if store.value(transition).len() != schema.len() {
            return Err(Error::RelationCountMismatch {
                expected: schema.len(),
                found: store.value(transition).len(),
            });
        }
        Ok(Self {
            config,
            schema,
            vocab,
            store,
            encoder,
            transition,
            phase: meta.phase,
        })
    }
}
