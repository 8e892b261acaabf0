//! Two-phase training with periodic checkpoints, validation-based model
//! selection, and checkpoint ensembling.
//!
//! Phase 1 trains the encoder with the transition column frozen at the
//! identity. At the phase boundary the column is (by default) reset to
//! `init_column(e, K)` and becomes trainable for the rest of the run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::kernels::argmax;
use crate::model::{Model, Phase, PreparedBag};
use crate::noise::init_column;
use crate::optim::{adam_step, OptimizerConfig};
use crate::selector::{Selector, SelectorOutput};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub total_epochs: usize,
    pub checkpoint_interval: usize,
    pub init_ratio: f64,
    pub ensemble_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Reset the column to `init_column(e, K)` at the phase boundary instead
    /// of continuing from the identity.
    pub reinit_transition: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            pretrain_epochs: 2,
            total_epochs: 20,
            checkpoint_interval: 200,
            init_ratio: 0.1,
            ensemble_size: 5,
            seed: 1,
            optimizer: OptimizerConfig::default(),
            reinit_transition: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.total_epochs == 0
            || self.checkpoint_interval == 0
            || self.ensemble_size == 0
        {
            return Err(Error::InvalidConfig(
                "batch size, epochs, checkpoint interval and ensemble size must be positive".into(),
            ));
        }
        if self.pretrain_epochs > self.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "pretrain epochs ({}) exceed total epochs ({})",
                self.pretrain_epochs, self.total_epochs
            )));
        }
        if !(self.init_ratio > 0.0 && self.init_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "init ratio must be in (0,1), got {}",
                self.init_ratio
            )));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u64,
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub val_accuracy: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<CheckpointRecord>,
    /// Index into `records` of the highest validation accuracy (earliest on
    /// ties).
    pub best: usize,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &CheckpointRecord {
        &self.records[self.best]
    }

    /// Paths of the last `n` checkpoints, oldest first.
    pub fn last_checkpoints(&self, n: usize) -> Vec<PathBuf> {
        let start = self.records.len().saturating_sub(n);
        self.records[start..]
            .iter()
            .map(|r| r.path.clone())
            .collect()
    }
}

/// Fraction of bags whose conditional-optimal group label equals the
/// observed bag label.
pub fn validate(model: &Model, bags: &[PreparedBag]) -> Result<f64> {
    validate_with(model, bags, Selector::ConditionalOptimal, 1)
}

pub fn validate_with(
    model: &Model,
    bags: &[PreparedBag],
    selector: Selector,
    threads: usize,
) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::Degenerate("empty validation set".into()));
    }
    let dists = model.predict_bags(bags, threads)?;
    let mut correct = 0usize;
    for (bag, d) in bags.iter().zip(&dists) {
        let label = bag
            .label
            .ok_or_else(|| Error::Degenerate("validation bag without label".into()))?;
        if selector.select(d)?.predicted_label() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / bags.len() as f64)
}

/// Accuracy of the per-sentence arg-max against planted truth, over every
/// sentence that has one.
pub fn sentence_accuracy(model: &Model, bags: &[PreparedBag], threads: usize) -> Result<f64> {
    let dists = model.predict_bags(bags, threads)?;
    let (mut correct, mut total) = (0usize, 0usize);
    for (bag, ds) in bags.iter().zip(&dists) {
        for (truth, d) in bag.truth.iter().zip(ds) {
            if let Some(t) = truth {
                total += 1;
                correct += (argmax(d) == *t) as usize;
            }
        }
    }
    if total == 0 {
        return Err(Error::Degenerate("no sentences with planted truth".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// One line of the training log. Paths are relative to the run directory so
/// that identical runs in different directories log identical bytes.
#[derive(Serialize)]
struct LogLine<'a> {
    step: u64,
    epoch: usize,
    phase: &'a str,
    loss: f64,
    val_accuracy: f64,
    path: String,
}

/// Dropout stream for one optimizer step; independent of how many masks
/// earlier steps drew.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    rng
}

/// Runs the full schedule, writing checkpoints under
/// `run_dir/checkpoints/` and one JSON line per checkpoint to
/// `run_dir/train_log.jsonl`.
pub fn train(
    model: &mut Model,
    train_bags: &[PreparedBag],
    val_bags: &[PreparedBag],
    config: &TrainConfig,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_bags.is_empty() || val_bags.is_empty() {
        return Err(Error::Degenerate(
            "training and validation bags must be non-empty".into(),
        ));
    }
    let ckpt_root = run_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_root).map_err(|e| Error::io(&ckpt_root, e))?;
    let log_path = run_dir.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);

    let k = model.k();
    let identity = crate::noise::StructuredTransition::identity(k).column;
    model.set_transition(&identity, false)?;
    model.phase = Phase::Pretrain;

    let mut order: Vec<usize> = (0..train_bags.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut window_loss = 0.0;
    let mut window_batches = 0usize;
    let mut last_saved = None;

    let mut checkpoint = |model: &Model,
                          epoch: usize,
                          loss: f64,
                          records: &mut Vec<CheckpointRecord>|
     -> Result<()> {
        let step = model.store.step;
        let path = ckpt_root.join(format!("step-{step:08}"));
        let val_accuracy = validate(model, val_bags)?;
        model.save(&path, config.seed)?;
        let record = CheckpointRecord {
            step,
            epoch,
            phase: model.phase,
            loss,
            val_accuracy,
            path,
        };
        let line = LogLine {
            step,
            epoch,
            phase: record.phase.as_str(),
            loss,
            val_accuracy,
            path: format!("{CHECKPOINT_DIR}/step-{step:08}"),
        };
        let line = serde_json::to_string(&line).map_err(|e| Error::json(&log_path, e))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        info!(
            "step {step} epoch {epoch} {} loss {loss:.5} val_acc {val_accuracy:.4}",
            record.phase.as_str()
        );
        records.push(record);
        Ok(())
    };

    for epoch in 0..config.total_epochs {
        if epoch == config.pretrain_epochs {
            let column = if config.reinit_transition {
                init_column(config.init_ratio, k)?
            } else {
                identity.clone()
            };
            model.set_transition(&column, true)?;
            model.phase = Phase::Finetune;
        }
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let bags: Vec<&PreparedBag> = batch.iter().map(|&i| &train_bags[i]).collect();
            let mut rng = step_rng(config.seed, model.store.step);
            let (loss, grads) = {
                let mut g = Graph::new(&model.store);
                let l = model.loss_graph(&mut g, &bags, Some(&mut rng))?;
                (g.scalar(l), g.backward(l)?)
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at step {} (last checkpoint retained)",
                    model.store.step
                )));
            }
            model.store.zero_grad();
            model.store.accumulate(&grads);
            adam_step(&mut model.store, &config.optimizer)?;
            window_loss += loss;
            window_batches += 1;
            if model
                .store
                .step
                .is_multiple_of(config.checkpoint_interval as u64)
            {
                checkpoint(
                    model,
                    epoch,
                    window_loss / window_batches as f64,
                    &mut records,
                )?;
                last_saved = Some(model.store.step);
                window_loss = 0.0;
                window_batches = 0;
            }
        }
    }
    if last_saved != Some(model.store.step) {
        let mean = if window_batches > 0 {
            window_loss / window_batches as f64
        } else {
            0.0
        };
        checkpoint(model, config.total_epochs - 1, mean, &mut records)?;
    }

    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.val_accuracy > records[best].val_accuracy {
            best = i;
        }
    }
    Ok(TrainOutcome { records, best })
}

/// Averages each sentence's true-label distribution over `models`, then
/// applies `selector` per bag. The average is taken in a canonical order so
/// the result does not depend on the order of `models`, and an ensemble of
/// identical models reproduces the single model bit for bit.
pub fn ensemble_predict(
    models: &[Model],
    bags: &[PreparedBag],
    selector: Selector,
    threads: usize,
) -> Result<Vec<SelectorOutput>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Degenerate("ensemble needs at least one checkpoint".into()))?;
    for m in models {
        if m.schema != first.schema {
            return Err(Error::RelationCountMismatch {
                expected: first.k(),
                found: m.k(),
            });
        }
    }
    let per_model: Vec<Vec<Vec<Vec<f64>>>> = models
        .iter()
        .map(|m| m.predict_bags(bags, threads))
        .collect::<Result<_>>()?;
    let n = models.len() as f64;
    let mut out = Vec::with_capacity(bags.len());
    let mut column = Vec::with_capacity(models.len());
    for (b, bag) in bags.iter().enumerate() {
        let dists: Vec<Vec<f64>> = (0..bag.instances.len())
            .map(|s| {
                (0..first.k())
                    .map(|k| {
                        column.clear();
                        column.extend(per_model.iter().map(|pm| pm[b][s][k]));
                        column.sort_by(f64::total_cmp);
                        // shifted by the smallest value so identical inputs average exactly
                        let base = column[0];
                        base + column.iter().map(|v| v - base).sum::<f64>() / n
                    })
                    .collect()
            })
            .collect();
        out.push(selector.select(&dists)?);
    }
    Ok(out)
}
