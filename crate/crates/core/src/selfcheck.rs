//! Randomized self-checks of the numerical core, runnable from a release
//! binary: gradient agreement, transition algebra, the loss bound and column
//! inversion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{EntityMention, Instance, RelationSchema, Vocabulary, PAD, UNK};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::gradcheck::{gradient_check, GradCheckReport};
use crate::kernels::softmax;
use crate::model::{Model, PreparedBag};
use crate::noise::{
    bag_loss, init_column, invert_for_column, loss_lower_bound, LogitBag, StructuredTransition,
};

/// Signature shared by [`bag_loss`] and any stand-in used to exercise the
/// bound check.
pub type LossFn = fn(&[LogitBag], &StructuredTransition) -> Result<f64>;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest observed error (or, for the bound, largest violation).
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Size of the model used for gradient checking.
pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        window: 3,
        filters: 8,
        word_dim: 16,
        position_dim: 4,
        max_len: 12,
        position_clip: 12,
        dropout_rate: 0.5,
        relations: 5,
    }
}

/// A model over a 50-token vocabulary with a random, trainable transition
/// column, plus a few labelled bags of sentences up to 12 tokens long.
pub fn tiny_model(seed: u64) -> Result<(Model, Vec<PreparedBag>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = tiny_config();
    let k = config.relations;
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend((0..48).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_tokens(tokens, config.word_dim, seed)?;
    let labels = std::iter::once("NA".to_string())
        .chain((1..k).map(|r| format!("rel_{r}")))
        .collect();
    let schema = RelationSchema::new(labels)?;
    let mut model = Model::new(config.clone(), schema.clone(), vocab, seed)?;
    let column: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.5..1.5)).collect();
    model.set_transition(&column, true)?;

    let mut bags = Vec::new();
    for b in 0..3 {
        let size = rng.gen_range(1..=3);
        let label = schema.label(rng.gen_range(0..k)).to_string();
        let instances: Vec<Instance> = (0..size)
            .map(|_| {
                let n = rng.gen_range(config.window..=config.max_len);
                let head = rng.gen_range(0..n);
                let mut tail = rng.gen_range(0..n);
                while tail == head {
                    tail = rng.gen_range(0..n);
                }
                Instance {
                    tokens: (0..n)
                        .map(|_| format!("w{}", rng.gen_range(0..48)))
                        .collect(),
                    head: EntityMention {
                        id: format!("h{b}"),
                        start: head,
                        end: head + 1,
                    },
                    tail: EntityMention {
                        id: format!("t{b}"),
                        start: tail,
                        end: tail + 1,
                    },
                    relation: label.clone(),
                    true_relation: None,
                }
            })
            .collect();
        bags.push(crate::data::Bag {
            head_id: format!("h{b}"),
            tail_id: format!("t{b}"),
            label: Some(label),
            instances,
        });
    }
    let (prepared, _) = model.prepare_bags(&bags)?;
    debug_assert!(prepared.iter().all(|b| b
        .instances
        .iter()
        .all(|x| x.token_ids.iter().all(|&t| t != PAD && t != UNK))));
    Ok((model, prepared))
}

/// Central-difference check of every parameter of [`tiny_model`] against
/// the bag loss with dropout off.
pub fn gradient_report(seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let (mut model, bags) = tiny_model(seed)?;
    let snapshot = model.clone();
    let refs: Vec<&PreparedBag> = bags.iter().collect();
    gradient_check(
        &mut model.store,
        |g| snapshot.loss_graph(g, &refs, None),
        step,
        tolerance,
    )
}

pub fn check_gradients(seed: u64) -> Result<CheckResult> {
    let report = gradient_report(seed, 1e-5, 1e-4)?;
    Ok(CheckResult {
        name: "gradients",
        trials: report.params.len(),
        failures: report
            .params
            .iter()
            .filter(|p| !(p.max_relative_error < 1e-4))
            .count(),
        worst: report.max_relative_error(),
        tolerance: report.tolerance,
    })
}

fn random_vec(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// The closed form `softmax(w₀h₀, w₁h₀ + h₁, …)` against the dense product,
/// and the dense layout against its template.
pub fn check_transition_algebra(trials: usize, seed: u64) -> CheckResult {
    let tolerance = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..trials {
        let k = rng.gen_range(2..=8);
        let w = StructuredTransition {
            column: random_vec(&mut rng, k, 2.0),
            trainable: true,
        };
        let h = random_vec(&mut rng, k, 5.0);
        let dense = w.dense();
        let template_ok = dense.iter().enumerate().all(|(i, row)| {
            row.iter().enumerate().all(|(j, &v)| match (i, j) {
                (_, 0) => v == w.column[i],
                _ if i == j => v == 1.0,
                _ => v == 0.0,
            })
        });
        let product: Vec<f64> = dense
            .iter()
            .map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum())
            .collect();
        let Ok(closed) = w.noisy_distribution(&h) else {
            failures += 1;
            continue;
        };
        let err = closed
            .iter()
            .zip(softmax(&product))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if !template_ok || !(err <= tolerance) {
            failures += 1;
        }
    }
    CheckResult {
        name: "transition_algebra",
        trials,
        failures,
        worst,
        tolerance,
    }
}

fn random_bags(rng: &mut ChaCha8Rng, k: usize) -> Vec<LogitBag> {
    (0..rng.gen_range(1..=4))
        .map(|_| LogitBag {
            label: rng.gen_range(0..k),
            logits: (0..rng.gen_range(1..=5))
                .map(|_| random_vec(rng, k, 4.0))
                .collect(),
        })
        .collect()
}

/// `loss ≥ bound ≥ 0` on random bags, with `loss` supplied by the caller.
pub fn check_loss_bound_with(trials: usize, seed: u64, loss: LossFn) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..trials {
        let k = rng.gen_range(2..=8);
        let w = StructuredTransition {
            column: random_vec(&mut rng, k, 2.0),
            trainable: true,
        };
        let bags = random_bags(&mut rng, k);
        match (loss(&bags, &w), loss_lower_bound(&bags, &w)) {
            (Ok(l), Ok(b)) => {
                let violation = (b - l).max(-b).max(0.0);
                worst = worst.max(violation);
                if !(l >= b && b >= 0.0) {
                    failures += 1;
                }
            }
            _ => failures += 1,
        }
    }
    CheckResult {
        name: "loss_bound",
        trials,
        failures,
        worst,
        tolerance: 0.0,
    }
}

pub fn check_loss_bound(trials: usize, seed: u64) -> CheckResult {
    check_loss_bound_with(trials, seed, bag_loss)
}

/// Plants a sum-1 column, maps random logits through it and inverts.
pub fn check_inversion(trials: usize, seed: u64) -> CheckResult {
    let tolerance = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..trials {
        let k = rng.gen_range(2..=8);
        let mut column = init_column(rng.gen_range(0.01..0.9), k).expect("valid ratio");
        for c in column.iter_mut() {
            *c += rng.gen_range(-0.2..0.2);
        }
        let shift = (column.iter().sum::<f64>() - 1.0) / k as f64;
        column.iter_mut().for_each(|c| *c -= shift);
        let mut h = random_vec(&mut rng, k, 3.0);
        if h[0].abs() < 0.1 {
            h[0] = 0.1f64.copysign(h[0]);
        }
        let w = StructuredTransition {
            column: column.clone(),
            trainable: true,
        };
        let recovered = w
            .noisy_distribution(&h)
            .and_then(|p| invert_for_column(&h, &p));
        match recovered {
            Ok(r) => {
                let err = r
                    .iter()
                    .zip(&column)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                worst = worst.max(err);
                if !(err <= tolerance) {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    CheckResult {
        name: "inversion",
        trials,
        failures,
        worst,
        tolerance,
    }
}

/// All checks with `trials` random draws each.
pub fn run_all(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_gradients(seed)?,
        check_transition_algebra(trials, seed),
        check_loss_bound(trials, seed),
        check_inversion(trials, seed),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_all(200, 5).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn tampered_loss_fails_bound() {
        fn halved(bags: &[LogitBag], w: &StructuredTransition) -> Result<f64> {
            Ok(0.5 * loss_lower_bound(bags, w)? - 1e-3)
        }
        assert!(!check_loss_bound_with(100, 1, halved).passed());
    }

    #[test]
    fn tiny_model_shape() {
        let (model, bags) = tiny_model(2).unwrap();
        assert_eq!(model.vocab.len(), 50);
        assert_eq!(model.k(), 5);
        assert!(bags
            .iter()
            .flat_map(|b| &b.instances)
            .all(|x| x.len() <= 12));
    }
}
