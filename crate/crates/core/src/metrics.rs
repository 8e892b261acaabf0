//! Held-out evaluation against gold (head, tail, relation) triples.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Bag, RelationSchema, NA_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub head_id: String,
    pub tail_id: String,
    pub relation: String,
    pub score: f64,
}

impl PredictionRecord {
    fn key(&self) -> (&str, &str, &str) {
        (&self.head_id, &self.tail_id, &self.relation)
    }
}

/// Positive gold triples; NA never appears.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldSet {
    triples: BTreeSet<(String, String, String)>,
}

impl GoldSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a triple; NA triples are ignored. Returns whether it was new.
    pub fn insert(&mut self, head: &str, tail: &str, relation: &str) -> bool {
        if relation == NA_LABEL {
            return false;
        }
        self.triples
            .insert((head.to_string(), tail.to_string(), relation.to_string()))
    }

    /// Every observed positive relation of every instance in `bags`.
    pub fn from_bags(bags: &[Bag]) -> Self {
        let mut gold = Self::new();
        for b in bags {
            for inst in &b.instances {
                gold.insert(&inst.head.id, &inst.tail.id, &inst.relation);
            }
        }
        gold
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, r: &PredictionRecord) -> bool {
        // BTreeSet<(String,..)> cannot be probed with borrowed tuples
        self.triples
            .range((r.head_id.clone(), r.tail_id.clone(), r.relation.clone())..)
            .next()
            .is_some_and(|(h, t, rel)| (h.as_str(), t.as_str(), rel.as_str()) == r.key())
    }
}

fn order(a: &PredictionRecord, b: &PredictionRecord) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.key().cmp(&b.key()))
}

/// One record per bag and positive relation, scored by the bag's group
/// distribution; sorted by descending score, ties lexicographic.
pub fn rank_predictions(
    bags: &[Bag],
    distributions: &[Vec<f64>],
    schema: &RelationSchema,
) -> Result<Vec<PredictionRecord>> {
    if bags.len() != distributions.len() {
        return Err(Error::ShapeMismatch {
            op: "rank_predictions",
            left: vec![bags.len()],
            right: vec![distributions.len()],
        });
    }
    let mut out = Vec::with_capacity(bags.len() * schema.len().saturating_sub(1));
    for (bag, dist) in bags.iter().zip(distributions) {
        if dist.len() != schema.len() {
            return Err(Error::RelationCountMismatch {
                expected: schema.len(),
                found: dist.len(),
            });
        }
        for (k, &score) in dist.iter().enumerate().skip(1) {
            if !score.is_finite() {
                return Err(Error::NonFinite(format!("score of {}", schema.label(k))));
            }
            out.push(PredictionRecord {
                head_id: bag.head_id.clone(),
                tail_id: bag.tail_id.clone(),
                relation: schema.label(k).to_string(),
                score,
            });
        }
    }
    out.sort_by(order);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

fn hits(ranking: &[PredictionRecord], gold: &GoldSet) -> Vec<bool> {
    ranking.iter().map(|r| gold.contains(r)).collect()
}

/// Precision and recall of every prefix of the ranking.
pub fn pr_curve(ranking: &[PredictionRecord], gold: &GoldSet) -> Result<Vec<PrPoint>> {
    if gold.is_empty() {
        return Err(Error::Degenerate("empty gold set".into()));
    }
    let mut found = 0usize;
    Ok(ranking
        .iter()
        .zip(hits(ranking, gold))
        .enumerate()
        .map(|(t, (r, hit))| {
            found += hit as usize;
            PrPoint {
                recall: found as f64 / gold.len() as f64,
                precision: found as f64 / (t + 1) as f64,
                score: r.score,
            }
        })
        .collect())
}

/// Hits among the top `min(n, len)` predictions over `min(n, len)`.
pub fn precision_at_n(ranking: &[PredictionRecord], gold: &GoldSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("N must be at least 1".into()));
    }
    if ranking.is_empty() {
        return Err(Error::Degenerate("empty ranking".into()));
    }
    let top = n.min(ranking.len());
    let found = ranking[..top].iter().filter(|r| gold.contains(r)).count();
    Ok(found as f64 / top as f64)
}

/// Sum of precision at every hit rank, divided by the gold size.
pub fn average_precision(ranking: &[PredictionRecord], gold: &GoldSet) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Degenerate("empty gold set".into()));
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (t, hit) in hits(ranking, gold).into_iter().enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (t + 1) as f64;
        }
    }
    Ok(sum / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub p_at: BTreeMap<usize, f64>,
    pub average_precision: f64,
}

impl MetricsSummary {
    pub fn compute(ranking: &[PredictionRecord], gold: &GoldSet, ns: &[usize]) -> Result<Self> {
        let mut p_at = BTreeMap::new();
        for &n in ns {
            p_at.insert(n, precision_at_n(ranking, gold, n)?);
        }
        Ok(Self {
            p_at,
            average_precision: average_precision(ranking, gold)?,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn write_pr_csv(path: &Path, curve: &[PrPoint]) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(f, "recall,precision,score").map_err(io)?;
    for p in curve {
        writeln!(f, "{},{},{}", p.recall, p.precision, p.score).map_err(io)?;
    }
    f.flush().map_err(io)
}
