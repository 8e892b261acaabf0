use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::Instance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagMode {
    /// Keyed by (head, tail, relation); every bag has a single label.
    Train,
    /// Keyed by (head, tail).
    Eval,
}

/// Sentences sharing an entity pair, and for training bags one observed
/// relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub head_id: String,
    pub tail_id: String,
    /// Observed label shared by all instances (training bags only).
    pub label: Option<String>,
    pub instances: Vec<Instance>,
}

impl Bag {
    pub fn pair(&self) -> (&str, &str) {
        (&self.head_id, &self.tail_id)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Groups instances into bags ordered by key. Instances keep their input
/// order inside a bag.
pub fn group_bags(instances: &[Instance], mode: BagMode) -> Vec<Bag> {
    let mut groups: BTreeMap<(&str, &str, Option<&str>), Vec<Instance>> = BTreeMap::new();
    for inst in instances {
        let rel = match mode {
            BagMode::Train => Some(inst.relation.as_str()),
            BagMode::Eval => None,
        };
        groups
            .entry((&inst.head.id, &inst.tail.id, rel))
            .or_default()
            .push(inst.clone());
    }
    groups
        .into_iter()
        .map(|((h, t, r), instances)| Bag {
            head_id: h.to_string(),
            tail_id: t.to_string(),
            label: r.map(str::to_string),
            instances,
        })
        .collect()
}

/// Splits bags at the entity-pair level: a seeded `fraction` of the distinct
/// pairs (at least one, at most all but one) goes to validation.
pub fn split_validation(bags: &[Bag], fraction: f64, seed: u64) -> Result<(Vec<Bag>, Vec<Bag>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction must be in (0,1), got {fraction}"
        )));
    }
    let pairs: BTreeSet<(&str, &str)> = bags.iter().map(Bag::pair).collect();
    if pairs.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 distinct entity pairs to split, got {}",
            pairs.len()
        )));
    }
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let n_val = ((fraction * pairs.len() as f64).round() as usize).clamp(1, pairs.len() - 1);
    let val_pairs: BTreeSet<(&str, &str)> = pairs[..n_val].iter().copied().collect();
    let (val, train): (Vec<Bag>, Vec<Bag>) = bags
        .iter()
        .cloned()
        .partition(|b| val_pairs.contains(&b.pair()));
    Ok((train, val))
}
