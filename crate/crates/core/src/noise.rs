//! The structured logit transition ("noise converter") and the bag-level
//! noisy-label loss.
//!
//! The transition matrix `W` maps true-label logits `h` to noisy-label
//! logits `W·h`. It is constrained to a free first column and an identity
//! elsewhere, so only NA (index 0) leaks into positive labels:
//!
//! ```text
//! h̃[0] = w[0]·h[0]
//! h̃[k] = w[k]·h[0] + h[k]      (k ≥ 1)
//! ```
//!
//! All label indices here are 0-based with NA at 0.

use std::io::Write;
use std::path::Path;

use crate::autodiff::{Graph, Var};
use crate::data::RelationSchema;
use crate::error::{Error, Result};
use crate::kernels::{self, log_sum_exp, softmax};
use crate::params::ParamId;

pub const TRANSITION: &str = "noise.transition_column";

/// Smallest `|h[0]|` accepted by [`invert_for_column`].
pub const MIN_INVERTIBLE_H0: f64 = 1e-6;

/// The `K` free parameters of the structured transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTransition {
    pub column: Vec<f64>,
    pub trainable: bool,
}

impl StructuredTransition {
    pub fn identity(k: usize) -> Self {
        let mut column = vec![0.0; k];
        column[0] = 1.0;
        Self {
            column,
            trainable: false,
        }
    }

    pub fn from_column(column: Vec<f64>) -> Result<Self> {
        if column.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "transition column needs K >= 2 entries, got {}",
                column.len()
            )));
        }
        Ok(Self {
            column,
            trainable: true,
        })
    }

    pub fn k(&self) -> usize {
        self.column.len()
    }

    /// Full `K × K` matrix, row-major by output label.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let k = self.k();
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| match (i, j) {
                        (_, 0) => self.column[i],
                        (i, j) if i == j => 1.0,
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect()
    }

    fn check(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.k() {
            return Err(Error::RelationCountMismatch {
                expected: self.k(),
                found: h.len(),
            });
        }
        Ok(())
    }

    /// Noisy-label logits `W·h`.
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check(h)?;
        Ok(kernels::transition(&self.column, h))
    }

    /// `p(ỹ) = softmax(W·h)`.
    pub fn noisy_distribution(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.apply(h)?))
    }
}

/// Column-stochastic matrix `Q` with `Q[u][v] = p(ỹ = u | y* = v)`; a
/// diagnostic view of what a logit transition does in probability space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTransition {
    pub q: Vec<Vec<f64>>,
}

impl ProbabilityTransition {
    pub fn validate(&self, tol: f64) -> Result<()> {
        let k = self.q.len();
        for v in 0..k {
            let col: Vec<f64> = self.q.iter().map(|row| row[v]).collect();
            if col.iter().any(|&x| x < 0.0) || (col.iter().sum::<f64>() - 1.0).abs() > tol {
                return Err(Error::Degenerate(format!(
                    "column {v} of Q is not a distribution"
                )));
            }
        }
        Ok(())
    }

    /// Estimates `Q` from paired (true, noisy) distributions:
    /// `Q[u][v] = Σₙ p̃ₙ(u)·p*ₙ(v) / Σₙ p*ₙ(v)`. Columns with no mass are
    /// set to the identity.
    pub fn estimate(pairs: &[(Vec<f64>, Vec<f64>)], k: usize) -> Self {
        let mut q = vec![vec![0.0; k]; k];
        let mut mass = vec![0.0; k];
        for (p_true, p_noisy) in pairs {
            for v in 0..k {
                mass[v] += p_true[v];
                for u in 0..k {
                    q[u][v] += p_noisy[u] * p_true[v];
                }
            }
        }
        for v in 0..k {
            for (u, row) in q.iter_mut().enumerate() {
                row[v] = if mass[v] > 0.0 {
                    row[v] / mass[v]
                } else if u == v {
                    1.0
                } else {
                    0.0
                };
            }
        }
        Self { q }
    }
}

/// Logits and distributions on both sides of the converter for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistributions {
    pub true_logits: Vec<f64>,
    pub noisy_logits: Vec<f64>,
    pub true_probs: Vec<f64>,
    pub noisy_probs: Vec<f64>,
}

impl LabelDistributions {
    pub fn compute(w: &StructuredTransition, h: &[f64]) -> Result<Self> {
        let noisy_logits = w.apply(h)?;
        Ok(Self {
            true_probs: softmax(h),
            noisy_probs: softmax(&noisy_logits),
            true_logits: h.to_vec(),
            noisy_logits,
        })
    }
}

/// True-label logits of a bag's sentences together with its observed label.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBag {
    pub label: usize,
    pub logits: Vec<Vec<f64>>,
}

fn check_bags(bags: &[LogitBag], w: &StructuredTransition) -> Result<()> {
    if bags.is_empty() {
        return Err(Error::Degenerate("no bags".into()));
    }
    for b in bags {
        if b.logits.is_empty() {
            return Err(Error::EmptyBag);
        }
        if b.label >= w.k() {
            return Err(Error::RelationCountMismatch {
                expected: w.k(),
                found: b.label + 1,
            });
        }
    }
    Ok(())
}

/// Mean over bags of the mean over sentences of `−log p(ỹ = label)`.
pub fn bag_loss(bags: &[LogitBag], w: &StructuredTransition) -> Result<f64> {
    check_bags(bags, w)?;
    let mut total = 0.0;
    for b in bags {
        let mut s = 0.0;
        for h in &b.logits {
            let ht = w.apply(h)?;
            s += log_sum_exp(&ht) - ht[b.label];
        }
        total += s / b.logits.len() as f64;
    }
    Ok(total / bags.len() as f64)
}

/// Replaces the log-sum-exp in [`bag_loss`] by the max; never exceeds the
/// loss and never negative.
pub fn loss_lower_bound(bags: &[LogitBag], w: &StructuredTransition) -> Result<f64> {
    check_bags(bags, w)?;
    let mut total = 0.0;
    for b in bags {
        let mut s = 0.0;
        for h in &b.logits {
            let ht = w.apply(h)?;
            let max = ht.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s += max - ht[b.label];
        }
        total += s / b.logits.len() as f64;
    }
    Ok(total / bags.len() as f64)
}

/// Recovers the transition column that maps `h` onto the noisy distribution
/// `target`. The solution is unique only up to adding a constant to every
/// entry; it is pinned by requiring the column to sum to 1.
pub fn invert_for_column(h: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if h.len() != target.len() || h.len() < 2 {
        return Err(Error::RelationCountMismatch {
            expected: h.len(),
            found: target.len(),
        });
    }
    let h0 = h[0];
    if !(h0.abs() >= MIN_INVERTIBLE_H0) {
        return Err(Error::Degenerate(format!(
            "|h[0]| = {} below {MIN_INVERTIBLE_H0}; the column is not identifiable",
            h0.abs()
        )));
    }
    if target.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Degenerate(
            "target distribution has a zero entry".into(),
        ));
    }
    let k = h.len() as f64;
    let base: Vec<f64> = target
        .iter()
        .zip(h)
        .enumerate()
        .map(|(i, (t, hk))| t.ln() - if i == 0 { 0.0 } else { *hk })
        .collect();
    let c = (h0 - base.iter().sum::<f64>()) / k;
    Ok(base.into_iter().map(|b| (b + c) / h0).collect())
}

/// `log p(ỹ)` computed through the log-space identity
/// `log p(ỹ=k) = Σⱼ W[k][j]·(log p(y*=j) + log Z*) − log Z̃`.
pub fn log_space_transform(w: &StructuredTransition, h: &[f64]) -> Result<Vec<f64>> {
    w.check(h)?;
    let p_true = softmax(h);
    if p_true.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Degenerate(
            "true-label distribution has a zero entry".into(),
        ));
    }
    let log_z_true = log_sum_exp(h);
    let log_z_noisy = log_sum_exp(&w.apply(h)?);
    let dense = w.dense();
    Ok(dense
        .iter()
        .map(|row| {
            row.iter()
                .zip(&p_true)
                .map(|(wkj, p)| wkj * (p.ln() + log_z_true))
                .sum::<f64>()
                - log_z_noisy
        })
        .collect())
}

/// Initial column: `1 − e` for NA and `e / (K − 1)` for every other label.
pub fn init_column(e: f64, k: usize) -> Result<Vec<f64>> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "init ratio e must be in (0,1), got {e}"
        )));
    }
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need K >= 2, got {k}")));
    }
    let mut column = vec![e / (k - 1) as f64; k];
    column[0] = 1.0 - e;
    Ok(column)
}

/// Graph form of [`bag_loss`] over already-encoded sentence logits.
pub fn bag_loss_graph(g: &mut Graph, column: ParamId, bags: &[(usize, Vec<Var>)]) -> Result<Var> {
    if bags.is_empty() {
        return Err(Error::Degenerate("no bags".into()));
    }
    let col = g.param(column);
    let mut per_bag = Vec::with_capacity(bags.len());
    for (label, logits) in bags {
        if logits.is_empty() {
            return Err(Error::EmptyBag);
        }
        let mut terms = Vec::with_capacity(logits.len());
        for &h in logits {
            let noisy = g.transition(col, h)?;
            terms.push(g.cross_entropy(noisy, *label)?);
        }
        let s = g.sum_all(&terms)?;
        per_bag.push(g.scale(s, 1.0 / logits.len() as f64));
    }
    let total = g.sum_all(&per_bag)?;
    Ok(g.scale(total, 1.0 / bags.len() as f64))
}

/// `relation_label,w_k1` per line, one line per label.
pub fn write_column_csv(path: &Path, schema: &RelationSchema, column: &[f64]) -> Result<()> {
    if column.len() != schema.len() {
        return Err(Error::RelationCountMismatch {
            expected: schema.len(),
            found: column.len(),
        });
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (label, w) in schema.labels().iter().zip(column) {
        writeln!(f, "{label},{w}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
