//! Synthetic distant-supervision corpora with planted sentence-level truth.
//!
//! Every bag is one entity pair. A positive bag carries a knowledge-base
//! relation `r` as the observed label of all its sentences, but each sentence
//! only expresses `r` (through a fixed relation-specific template between
//! the entities) with probability `expressive_rate`; the others are filler
//! whose true label is NA. NA bags contain filler only.
//!
//! Entity mentions are typed: positive bags of relation `r` draw their
//! mentions from `r`'s head/tail pools, so a filler sentence still carries
//! the entity-type cue of its bag. NA bags draw from a generic pool, except
//! for a `typed_na_fraction` share that borrow a random relation's pools.
//! This is what makes distant labels misleading: the type cue alone
//! correlates with the positive label.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{EntityMention, Instance, RelationSchema, NA_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of relation labels including NA.
    pub relations: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub bags: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a sentence of a positive bag expresses the relation.
    pub expressive_rate: f64,
    pub na_bag_fraction: f64,
    /// Share of NA bags whose mentions come from a relation's typed pools.
    pub typed_na_fraction: f64,
    /// Mentions per typed pool.
    pub entity_pool: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            relations: 5,
            vocab_size: 200,
            bags: 2000,
            min_sentences: 1,
            max_sentences: 5,
            expressive_rate: 0.5,
            na_bag_fraction: 0.4,
            typed_na_fraction: 0.5,
            entity_pool: 10,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be in [0,1], got {v}"
                )))
            }
        };
        unit("expressive rate (rho)", self.expressive_rate)?;
        unit("NA bag fraction", self.na_bag_fraction)?;
        unit("typed NA fraction", self.typed_na_fraction)?;
        if self.relations < 2 {
            return Err(Error::InvalidConfig(format!(
                "need K >= 2 relations, got {}",
                self.relations
            )));
        }
        if self.vocab_size == 0 || self.entity_pool == 0 {
            return Err(Error::InvalidConfig(
                "vocabulary and entity pool must be non-empty".into(),
            ));
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return Err(Error::InvalidConfig(format!(
                "invalid sentences-per-bag range {}..={}",
                self.min_sentences, self.max_sentences
            )));
        }
        Ok(())
    }

    pub fn schema(&self) -> RelationSchema {
        let labels = std::iter::once(NA_LABEL.to_string())
            .chain((1..self.relations).map(|r| format!("rel_{r}")))
            .collect();
        RelationSchema::new(labels).expect("synthetic schema is valid")
    }
}

fn filler(rng: &mut ChaCha8Rng, cfg: &SynthConfig, n: usize, out: &mut Vec<String>) {
    for _ in 0..n {
        out.push(format!("w{}", rng.gen_range(0..cfg.vocab_size)));
    }
}

fn template(relation: usize) -> [String; 2] {
    [format!("t{relation}a"), format!("t{relation}b")]
}

/// Generates the corpus bag by bag; all randomness comes from `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Instance>> {
    cfg.validate()?;
    let schema = cfg.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_na = (cfg.na_bag_fraction * cfg.bags as f64).round() as usize;
    let mut is_na: Vec<bool> = (0..cfg.bags).map(|g| g < n_na).collect();
    is_na.shuffle(&mut rng);

    let mut out = Vec::new();
    for (g, &na) in is_na.iter().enumerate() {
        let relation = if na {
            0
        } else {
            rng.gen_range(1..cfg.relations)
        };
        // entity type: 0 = generic pool, r = relation r's pools
        let entity_type = if !na {
            relation
        } else if rng.gen::<f64>() < cfg.typed_na_fraction {
            rng.gen_range(1..cfg.relations)
        } else {
            0
        };
        let head_token = format!("e{entity_type}h{}", rng.gen_range(0..cfg.entity_pool));
        let tail_token = format!("e{entity_type}t{}", rng.gen_range(0..cfg.entity_pool));
        let n = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
        for _ in 0..n {
            let expressive = !na && rng.gen::<f64>() < cfg.expressive_rate;
            let mut tokens = Vec::new();
            let prefix = rng.gen_range(0..=2);
            filler(&mut rng, cfg, prefix, &mut tokens);
            let head_start = tokens.len();
            tokens.push(head_token.clone());
            if expressive {
                let pad = rng.gen_range(0..=1);
                filler(&mut rng, cfg, pad, &mut tokens);
                tokens.extend(template(relation));
            } else {
                let mid = rng.gen_range(1..=3);
                filler(&mut rng, cfg, mid, &mut tokens);
            }
            let tail_start = tokens.len();
            tokens.push(tail_token.clone());
            let suffix = rng.gen_range(0..=2);
            filler(&mut rng, cfg, suffix, &mut tokens);

            let truth = if expressive { relation } else { 0 };
            out.push(Instance {
                tokens,
                head: EntityMention {
                    id: format!("b{g}:h"),
                    start: head_start,
                    end: head_start + 1,
                },
                tail: EntityMention {
                    id: format!("b{g}:t"),
                    start: tail_start,
                    end: tail_start + 1,
                },
                relation: schema.label(relation).to_string(),
                true_relation: Some(schema.label(truth).to_string()),
            });
        }
    }
    Ok(out)
}

/// Fraction of positively labeled instances whose planted truth differs
/// from the observed label. `None` when there are no positive instances.
pub fn noisy_fraction(instances: &[Instance]) -> Option<f64> {
    let positives: Vec<_> = instances
        .iter()
        .filter(|i| i.relation != NA_LABEL)
        .collect();
    if positives.is_empty() {
        return None;
    }
    let noisy = positives
        .iter()
        .filter(|i| i.true_relation.as_deref() != Some(i.relation.as_str()))
        .count();
    Some(noisy as f64 / positives.len() as f64)
}
