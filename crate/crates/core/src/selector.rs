//! Bag-level prediction from per-sentence true-label distributions.
//!
//! Label index 0 is NA. A bag is predicted NA only when every sentence's
//! most likely label is NA; otherwise the positive evidence decides.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorOutput {
    /// Group label distribution.
    pub distribution: Vec<f64>,
    /// Sentence whose distribution was selected (`None` for averaged output).
    pub chosen: Option<usize>,
    /// Most likely positive relation; set only in the positive branch.
    pub relation: Option<usize>,
}

impl SelectorOutput {
    pub fn is_positive(&self) -> bool {
        self.relation.is_some()
    }

    /// Group label: the selected positive relation, or NA.
    pub fn predicted_label(&self) -> usize {
        self.relation.unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    #[default]
    ConditionalOptimal,
    AvgWeighted,
}

impl Selector {
    pub fn select(self, dists: &[Vec<f64>]) -> Result<SelectorOutput> {
        match self {
            Selector::ConditionalOptimal => conditional_optimal_select(dists),
            Selector::AvgWeighted => avg_weighted_select(dists),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Selector::ConditionalOptimal => "cond_opt",
            Selector::AvgWeighted => "avg_weighted",
        }
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cond_opt" | "conditional_optimal" => Ok(Selector::ConditionalOptimal),
            "avg_weighted" => Ok(Selector::AvgWeighted),
            other => Err(Error::InvalidConfig(format!(
                "unknown selector {other:?} (expected cond_opt or avg_weighted)"
            ))),
        }
    }
}

fn check(dists: &[Vec<f64>]) -> Result<()> {
    let first = dists.first().ok_or(Error::EmptyBag)?;
    if first.len() < 2 || dists.iter().any(|d| d.len() != first.len()) {
        return Err(Error::RelationCountMismatch {
            expected: first.len(),
            found: dists
                .iter()
                .map(Vec::len)
                .find(|&l| l != first.len())
                .unwrap_or(0),
        });
    }
    Ok(())
}

/// Sentence with the highest NA probability, lowest index on ties.
fn most_confident_na(dists: &[Vec<f64>]) -> SelectorOutput {
    let mut j = 0;
    for (i, d) in dists.iter().enumerate().skip(1) {
        if d[0] > dists[j][0] {
            j = i;
        }
    }
    SelectorOutput {
        distribution: dists[j].clone(),
        chosen: Some(j),
        relation: None,
    }
}

/// If every sentence predicts NA, returns the most confidently NA sentence.
/// Otherwise returns the sentence holding the single largest positive-label
/// probability across the bag; ties go to the lowest sentence index, then
/// the lowest relation index.
pub fn conditional_optimal_select(dists: &[Vec<f64>]) -> Result<SelectorOutput> {
    check(dists)?;
    if dists.iter().all(|d| argmax(d) == 0) {
        return Ok(most_confident_na(dists));
    }
    let (mut j, mut kappa) = (0, 1);
    for (i, d) in dists.iter().enumerate() {
        for (k, &p) in d.iter().enumerate().skip(1) {
            if p > dists[j][kappa] {
                j = i;
                kappa = k;
            }
        }
    }
    Ok(SelectorOutput {
        distribution: dists[j].clone(),
        chosen: Some(j),
        relation: Some(kappa),
    })
}

/// Ablation selector: same NA branch, but in the positive branch averages
/// the distributions of all sentences whose arg-max is a positive label.
pub fn avg_weighted_select(dists: &[Vec<f64>]) -> Result<SelectorOutput> {
    check(dists)?;
    let positives: Vec<&Vec<f64>> = dists.iter().filter(|d| argmax(d) != 0).collect();
    if positives.is_empty() {
        return Ok(most_confident_na(dists));
    }
    let k = dists[0].len();
    let mut mean = vec![0.0; k];
    for d in &positives {
        for (m, p) in mean.iter_mut().zip(d.iter()) {
            *m += p;
        }
    }
    let n = positives.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let kappa = 1 + argmax(&mean[1..]);
    Ok(SelectorOutput {
        distribution: mean,
        chosen: None,
        relation: Some(kappa),
    })
}

/// Every positive relation whose probability reaches `threshold` in at
/// least one sentence.
pub fn multi_label_predict(dists: &[Vec<f64>], threshold: f64) -> Result<BTreeSet<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be in (0,1), got {threshold}"
        )));
    }
    check(dists)?;
    let k = dists[0].len();
    Ok((1..k)
        .filter(|&r| dists.iter().any(|d| d[r] >= threshold))
        .collect())
}
