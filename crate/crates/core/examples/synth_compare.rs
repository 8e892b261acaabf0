//! Trains the full model and the identity-transition ablation on a synthetic
//! corpus and prints held-out AP and sentence accuracy for each.
//!
//! cargo run --release -p noisyre-core --example synth_compare -- \
//!     [seeds] [pretrain_epochs] [learning_rate] [typed_na_fraction] [init_ratio] [seed_offset]

use std::time::Instant;

use noisyre::data::{
    group_bags, split_validation, synth_generate, BagMode, SynthConfig, Vocabulary,
};
use noisyre::encoder::EncoderConfig;
use noisyre::metrics::{average_precision, rank_predictions, GoldSet};
use noisyre::model::Model;
use noisyre::optim::OptimizerConfig;
use noisyre::selector::Selector;
use noisyre::trainer::{ensemble_predict, sentence_accuracy, train, TrainConfig};

fn main() -> noisyre::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let pre: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let lr: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.02);
    let typed: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.5);
    let e: f64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.1);
    let base: u64 = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let (mut sums_full, mut sums_abl) = ((0.0, 0.0), (0.0, 0.0));
    for seed in base + 1..=base + seeds {
        let synth = SynthConfig {
            seed,
            typed_na_fraction: typed,
            ..Default::default()
        };
        let schema = synth.schema();
        let instances = synth_generate(&synth)?;
        let bags = group_bags(&instances, BagMode::Train);
        let (rest, test) = split_validation(&bags, 0.2, seed)?;
        let (train_b, val_b) = split_validation(&rest, 0.1, seed)?;
        let train_inst: Vec<_> = train_b.iter().flat_map(|b| b.instances.clone()).collect();
        let enc = EncoderConfig {
            filters: 32,
            word_dim: 16,
            position_dim: 4,
            position_clip: 10,
            relations: schema.len(),
            ..Default::default()
        };
        let vocab = Vocabulary::build(&train_inst, enc.word_dim, 1, seed)?;
        for (name, pretrain) in [("full", pre), ("ablation", 5)] {
            let t0 = Instant::now();
            let mut model = Model::new(enc.clone(), schema.clone(), vocab.clone(), seed)?;
            let (tr, _) = model.prepare_bags(&train_b)?;
            let (va, _) = model.prepare_bags(&val_b)?;
            let (te, _) = model.prepare_bags(&test)?;
            let cfg = TrainConfig {
                batch_size: 10,
                pretrain_epochs: pretrain,
                total_epochs: 5,
                checkpoint_interval: 1000,
                init_ratio: e,
                seed,
                optimizer: OptimizerConfig {
                    learning_rate: lr,
                    ..Default::default()
                },
                ..Default::default()
            };
            let dir = std::env::temp_dir().join(format!("synth_{name}_{seed}"));
            train(&mut model, &tr, &va, &cfg, &dir)?;
            let out = ensemble_predict(
                std::slice::from_ref(&model),
                &te,
                Selector::ConditionalOptimal,
                1,
            )?;
            let dists: Vec<_> = out.iter().map(|o| o.distribution.clone()).collect();
            let ranking = rank_predictions(&test, &dists, &schema)?;
            let ap = average_precision(&ranking, &GoldSet::from_bags(&test))?;
            let acc = sentence_accuracy(&model, &te, 1)?;
            if name == "full" {
                sums_full.0 += ap;
                sums_full.1 += acc;
            } else {
                sums_abl.0 += ap;
                sums_abl.1 += acc;
            }
            if std::env::var("QUIET").is_err() {
                println!(
                    "seed {seed} {name:8} AP {ap:.4} sent_acc {acc:.4} col {:?} ({:.1}s)",
                    model
                        .transition_matrix()
                        .column
                        .iter()
                        .map(|v| (v * 1000.0).round() / 1000.0)
                        .collect::<Vec<_>>(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
    let n = seeds as f64;
    println!(
        "MEAN full AP {:.4} acc {:.4} | ablation AP {:.4} acc {:.4}",
        sums_full.0 / n,
        sums_full.1 / n,
        sums_abl.0 / n,
        sums_abl.1 / n
    );
    Ok(())
}
