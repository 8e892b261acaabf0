//! Acceptance suite. Each criterion prints one PASS or FAIL line with the
//! numbers behind it; the process fails if any criterion fails.
//!
//! The oracles here are written independently of the library: losses,
//! distributions, selectors and metrics are recomputed from their
//! definitions rather than by calling the code under test.

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use noisyre::autodiff::Graph;
use noisyre::data::{
    group_bags, split_validation, synth_generate, Bag, BagMode, EntityMention, Instance,
    RelationSchema, SynthConfig, Vocabulary,
};
use noisyre::encoder::EncoderConfig;
use noisyre::metrics::{
    average_precision, pr_curve, precision_at_n, rank_predictions, GoldSet, PredictionRecord,
};
use noisyre::noise::{
    bag_loss, invert_for_column, loss_lower_bound, LogitBag, StructuredTransition,
};
use noisyre::optim::OptimizerConfig;
use noisyre::selector::Selector;
use noisyre::selector::{avg_weighted_select, conditional_optimal_select, SelectorOutput};
use noisyre::trainer::{ensemble_predict, sentence_accuracy, train, TrainConfig};
use noisyre::{Model, PreparedBag};
use noisyre_cli::{cmd_synth, cmd_train, CommonArgs, SynthArgs, TrainArgs};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lse(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let z = lse(x);
    x.iter().map(|v| (v - z).exp()).collect()
}

/// Lowest index among the maxima.
fn first_argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..x.len() {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

fn random_vec(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn dense_template(column: &[f64]) -> Vec<Vec<f64>> {
    let k = column.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        m[i][0] = column[i];
        if i > 0 {
            m[i][i] = 1.0;
        }
    }
    m
}

// ---------------------------------------------------------------- 1

fn tiny_bags(rng: &mut ChaCha8Rng, schema: &RelationSchema) -> Vec<Bag> {
    (0..4)
        .map(|b| {
            let label = schema.label(rng.gen_range(0..schema.len())).to_string();
            let instances = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let n = rng.gen_range(3..=12);
                    let head = rng.gen_range(0..n - 1);
                    let tail = rng.gen_range(head + 1..n);
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
            Bag {
                head_id: format!("h{b}"),
                tail_id: format!("t{b}"),
                label: Some(label),
                instances,
            }
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let config = EncoderConfig {
        window: 3,
        filters: 8,
        word_dim: 16,
        position_dim: 4,
        max_len: 12,
        position_clip: 12,
        dropout_rate: 0.5,
        relations: 5,
    };
    let schema = RelationSchema::new(["NA", "r1", "r2", "r3", "r4"].map(String::from).to_vec())
        .map_err(|e| e.to_string())?;
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend((0..48).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_tokens(tokens, 16, 7).map_err(|e| e.to_string())?;
    ensure(vocab.len() == 50, || {
        format!("vocabulary has {} tokens", vocab.len())
    })?;
    let mut model = Model::new(config, schema.clone(), vocab, 7).map_err(|e| e.to_string())?;
    let column = random_vec(&mut rng, 5, 1.0);
    model
        .set_transition(&column, true)
        .map_err(|e| e.to_string())?;
    let (bags, rejected) = model
        .prepare_bags(&tiny_bags(&mut rng, &schema))
        .map_err(|e| e.to_string())?;
    ensure(rejected == 0, || "tiny sentences rejected".into())?;

    let loss_of = |m: &Model| -> f64 {
        let refs: Vec<&PreparedBag> = bags.iter().collect();
        let mut g = Graph::new(&m.store);
        let l = m.loss_graph(&mut g, &refs, None).expect("loss graph");
        g.scalar(l)
    };
    let grads = {
        let refs: Vec<&PreparedBag> = bags.iter().collect();
        let mut g = Graph::new(&model.store);
        let l = model
            .loss_graph(&mut g, &refs, None)
            .map_err(|e| e.to_string())?;
        g.backward(l).map_err(|e| e.to_string())?
    };

    let step = 1e-5;
    let ids: Vec<_> = model.store.ids().collect();
    let (mut worst, mut worst_name, mut elements) = (0.0f64, String::new(), 0usize);
    for id in ids {
        let name = model.store.param(id).name.clone();
        let len = model.store.value(id).len();
        let analytic = grads.dense(id, len);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.store.value(id).data()[i];
            model.store.value_mut(id).data_mut()[i] = orig + step;
            let plus = loss_of(&model);
            model.store.value_mut(id).data_mut()[i] = orig - step;
            let minus = loss_of(&model);
            model.store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if err > worst {
                worst = err;
                worst_name = name.clone();
            }
            elements += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, || {
        format!("max relative error {worst:.3e} in {worst_name}")
    })?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{elements} elements, max relative error {worst:.2e}, {secs:.2}s"
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for draw in 0..1000 {
        let k = rng.gen_range(2..=10);
        let column = random_vec(&mut rng, k, 2.0);
        let h = random_vec(&mut rng, k, 6.0);
        let w = StructuredTransition {
            column: column.clone(),
            trainable: true,
        };
        ensure(w.dense() == dense_template(&column), || {
            format!("draw {draw}: dense layout differs from template")
        })?;
        let product: Vec<f64> = dense_template(&column)
            .iter()
            .map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum())
            .collect();
        let reference = softmax(&product);
        // categorical form: exp(w1 h1) / Z and exp(wk h1 + hk) / Z
        let mut terms = vec![column[0] * h[0]];
        terms.extend((1..k).map(|i| column[i] * h[0] + h[i]));
        let z = lse(&terms);
        let categorical: Vec<f64> = terms.iter().map(|t| (t - z).exp()).collect();
        let library = w.noisy_distribution(&h).map_err(|e| e.to_string())?;
        for i in 0..k {
            let e = (categorical[i] - reference[i])
                .abs()
                .max((library[i] - reference[i]).abs());
            worst = worst.max(e);
            ensure(e <= 1e-12, || {
                format!("draw {draw}: entry {i} differs by {e:.3e}")
            })?;
        }
    }
    Ok(format!(
        "1000 draws, max deviation {worst:.2e}, dense template exact"
    ))
}

// ---------------------------------------------------------------- 3

fn random_logit_bags(rng: &mut ChaCha8Rng, k: usize, equal_sizes: Option<usize>) -> Vec<LogitBag> {
    (0..rng.gen_range(1..=5))
        .map(|_| {
            let n = equal_sizes.unwrap_or_else(|| rng.gen_range(1..=6));
            LogitBag {
                label: rng.gen_range(0..k),
                logits: (0..n).map(|_| random_vec(rng, k, 5.0)).collect(),
            }
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut min_gap = f64::INFINITY;
    for draw in 0..1000 {
        let k = rng.gen_range(2..=10);
        let w = StructuredTransition {
            column: random_vec(&mut rng, k, 2.0),
            trainable: true,
        };
        let bags = random_logit_bags(&mut rng, k, None);
        let loss = bag_loss(&bags, &w).map_err(|e| e.to_string())?;
        let bound = loss_lower_bound(&bags, &w).map_err(|e| e.to_string())?;
        ensure(loss >= bound, || {
            format!("draw {draw}: loss {loss} below bound {bound}")
        })?;
        ensure(bound >= 0.0, || {
            format!("draw {draw}: negative bound {bound}")
        })?;
        min_gap = min_gap.min(loss - bound);
    }
    // K=2, column [0.7, 0.3], h = [1, 0], observed label 2 (index 1)
    let noisy: [f64; 2] = [0.7 * 1.0, 0.3 * 1.0 + 0.0];
    let oracle_loss = (noisy[0].exp() + noisy[1].exp()).ln() - noisy[1];
    let oracle_bound = noisy[0].max(noisy[1]) - noisy[1];
    let w = StructuredTransition {
        column: vec![0.7, 0.3],
        trainable: true,
    };
    let bag = [LogitBag {
        label: 1,
        logits: vec![vec![1.0, 0.0]],
    }];
    let loss = bag_loss(&bag, &w).map_err(|e| e.to_string())?;
    let bound = loss_lower_bound(&bag, &w).map_err(|e| e.to_string())?;
    ensure(
        (loss - oracle_loss).abs() < 1e-4 && (loss - 0.9130).abs() < 1e-4,
        || format!("example loss {loss}"),
    )?;
    ensure(
        (bound - oracle_bound).abs() < 1e-4 && (bound - 0.4).abs() < 1e-4,
        || format!("example bound {bound}"),
    )?;
    Ok(format!(
        "1000 draws hold (smallest gap {min_gap:.2e}); example loss {loss:.4}, bound {bound:.4}"
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for draw in 0..1000 {
        let k = rng.gen_range(2..=10);
        let w = StructuredTransition::identity(k);
        let equal = (draw % 2 == 0).then(|| rng.gen_range(1..=6));
        let bags = random_logit_bags(&mut rng, k, equal);
        let ce = |h: &Vec<f64>, y: usize| -softmax(h)[y].ln();
        // bag-averaged cross-entropy
        let nested = bags
            .iter()
            .map(|b| b.logits.iter().map(|h| ce(h, b.label)).sum::<f64>() / b.logits.len() as f64)
            .sum::<f64>()
            / bags.len() as f64;
        let loss = bag_loss(&bags, &w).map_err(|e| e.to_string())?;
        let mut err = (loss - nested).abs();
        if equal.is_some() {
            // with equal bag sizes this is also the flat per-sentence mean
            let all: Vec<f64> = bags
                .iter()
                .flat_map(|b| b.logits.iter().map(|h| ce(h, b.label)))
                .collect();
            err = err.max((loss - all.iter().sum::<f64>() / all.len() as f64).abs());
        }
        worst = worst.max(err);
        ensure(err <= 1e-12, || {
            format!("draw {draw}: differs by {err:.3e}")
        })?;
    }
    Ok(format!("1000 random bag sets, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for pair in 0..100 {
        let k = rng.gen_range(2..=10);
        let mut column = random_vec(&mut rng, k, 1.5);
        let shift = (column.iter().sum::<f64>() - 1.0) / k as f64;
        column.iter_mut().for_each(|c| *c -= shift);
        let mut h = random_vec(&mut rng, k, 4.0);
        while h[0].abs() < 0.1 {
            h[0] = rng.gen_range(-4.0..4.0);
        }
        let mut noisy = vec![column[0] * h[0]];
        noisy.extend((1..k).map(|i| column[i] * h[0] + h[i]));
        let target = softmax(&noisy);
        let recovered = invert_for_column(&h, &target).map_err(|e| format!("pair {pair}: {e}"))?;
        let err = recovered
            .iter()
            .zip(&column)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        ensure(err <= 1e-8, || {
            format!("pair {pair}: recovered column off by {err:.3e}")
        })?;
    }
    Ok(format!("100 pairs, max error {worst:.2e}"))
}

// ---------------------------------------------------------------- 6

fn random_distributions(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let k = rng.gen_range(2..=7);
    let n = rng.gen_range(1..=8);
    let na_bias = rng.gen_range(0.0..4.0);
    let mut dists: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut h = random_vec(rng, k, 3.0);
            h[0] += na_bias;
            softmax(&h)
        })
        .collect();
    // duplicated sentences exercise the tie rules
    if n > 1 && rng.gen_bool(0.3) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        dists[b] = dists[a].clone();
    }
    dists
}

/// Most confident NA sentence (lowest index on ties).
fn reference_na(dists: &[Vec<f64>]) -> (Vec<f64>, Option<usize>) {
    let na: Vec<f64> = dists.iter().map(|d| d[0]).collect();
    let j = first_argmax(&na);
    (dists[j].clone(), None)
}

fn reference_cond_opt(dists: &[Vec<f64>]) -> (Vec<f64>, Option<usize>) {
    if dists.iter().all(|d| first_argmax(d) == 0) {
        return reference_na(dists);
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (j, d) in dists.iter().enumerate() {
        for (k, &p) in d.iter().enumerate().skip(1) {
            candidates.push((p, j, k));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (_, j, k) = candidates[0];
    (dists[j].clone(), Some(k))
}

fn reference_avg(dists: &[Vec<f64>]) -> (Vec<f64>, Option<usize>) {
    let positives: Vec<&Vec<f64>> = dists.iter().filter(|d| first_argmax(d) != 0).collect();
    if positives.is_empty() {
        return reference_na(dists);
    }
    let k = dists[0].len();
    let mean: Vec<f64> = (0..k)
        .map(|i| {
            let mut s = 0.0;
            for d in &positives {
                s += d[i];
            }
            s / positives.len() as f64
        })
        .collect();
    let kappa = 1 + first_argmax(&mean[1..]);
    (mean, Some(kappa))
}

fn same(out: &SelectorOutput, reference: &(Vec<f64>, Option<usize>)) -> bool {
    out.relation == reference.1
        && out.distribution.len() == reference.0.len()
        && out
            .distribution
            .iter()
            .zip(&reference.0)
            .all(|(a, b)| a.to_bits() == b.to_bits())
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut na_branch, mut ties) = (0, 0);
    for bag in 0..1000 {
        let dists = random_distributions(&mut rng);
        let c = conditional_optimal_select(&dists).map_err(|e| e.to_string())?;
        let a = avg_weighted_select(&dists).map_err(|e| e.to_string())?;
        let rc = reference_cond_opt(&dists);
        ensure(same(&c, &rc), || {
            format!("bag {bag}: cond_opt {c:?} vs reference {rc:?}")
        })?;
        let ra = reference_avg(&dists);
        ensure(same(&a, &ra), || {
            format!("bag {bag}: avg_weighted {a:?} vs reference {ra:?}")
        })?;
        na_branch += rc.1.is_none() as usize;
        ties += (dists.len() > 1 && dists.iter().skip(1).any(|d| d == &dists[0])) as usize;
    }
    Ok(format!(
        "1000 bags match ({na_branch} NA branch, {ties} with duplicated sentences)"
    ))
}

// ---------------------------------------------------------------- 7

fn random_ranking(
    rng: &mut ChaCha8Rng,
) -> (
    Vec<PredictionRecord>,
    GoldSet,
    Vec<(String, String, String)>,
) {
    let n = rng.gen_range(1..=200);
    let levels = rng.gen_range(2..=50);
    let mut records: Vec<PredictionRecord> = (0..n)
        .map(|i| PredictionRecord {
            head_id: format!("h{}", i % 37),
            tail_id: format!("t{i}"),
            relation: format!("r{}", rng.gen_range(1..4)),
            // coarse scores produce ties
            score: rng.gen_range(0..levels) as f64 / levels as f64,
        })
        .collect();
    records.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| {
            (&a.head_id, &a.tail_id, &a.relation).cmp(&(&b.head_id, &b.tail_id, &b.relation))
        })
    });
    let mut gold = GoldSet::new();
    let mut triples = Vec::new();
    for r in &records {
        if rng.gen_bool(0.4) && gold.insert(&r.head_id, &r.tail_id, &r.relation) {
            triples.push((r.head_id.clone(), r.tail_id.clone(), r.relation.clone()));
        }
    }
    // gold facts the ranking never reaches
    for j in 0..rng.gen_range(0..20) {
        let t = (format!("x{j}"), format!("y{j}"), "r1".to_string());
        if gold.insert(&t.0, &t.1, &t.2) {
            triples.push(t);
        }
    }
    if triples.is_empty() {
        let r = &records[0];
        gold.insert(&r.head_id, &r.tail_id, &r.relation);
        triples.push((r.head_id.clone(), r.tail_id.clone(), r.relation.clone()));
    }
    (records, gold, triples)
}

/// Recounts every metric by set membership and compares exactly.
fn check_metrics(
    ranking: &[PredictionRecord],
    gold: &GoldSet,
    triples: &[(String, String, String)],
) -> Result<(), String> {
    let set: HashSet<(&str, &str, &str)> = triples
        .iter()
        .map(|(h, t, r)| (h.as_str(), t.as_str(), r.as_str()))
        .collect();
    let hit = |r: &PredictionRecord| {
        set.contains(&(r.head_id.as_str(), r.tail_id.as_str(), r.relation.as_str()))
    };
    let curve = pr_curve(ranking, gold).map_err(|e| e.to_string())?;
    ensure(curve.len() == ranking.len(), || "curve length".into())?;
    let mut ap_sum = 0.0;
    for t in 1..=ranking.len() {
        let hits = ranking[..t].iter().filter(|r| hit(r)).count();
        let precision = hits as f64 / t as f64;
        let recall = hits as f64 / set.len() as f64;
        let row = curve[t - 1];
        ensure(
            row.precision == precision && row.recall == recall && row.score == ranking[t - 1].score,
            || format!("pr row {t}: {row:?} vs ({recall}, {precision})"),
        )?;
        if hit(&ranking[t - 1]) {
            ap_sum += precision;
        }
    }
    for n in [1, 2, 5, 10, 50, 100, 200, 300, ranking.len()] {
        let top = n.min(ranking.len());
        let expected = ranking[..top].iter().filter(|r| hit(r)).count() as f64 / top as f64;
        let got = precision_at_n(ranking, gold, n).map_err(|e| e.to_string())?;
        ensure(got == expected, || format!("P@{n}: {got} vs {expected}"))?;
    }
    let ap = average_precision(ranking, gold).map_err(|e| e.to_string())?;
    let expected = ap_sum / set.len() as f64;
    ensure(ap == expected, || format!("AP {ap} vs {expected}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut total = 0;
    for instance in 0..200 {
        let (ranking, gold, triples) = random_ranking(&mut rng);
        check_metrics(&ranking, &gold, &triples)
            .map_err(|e| format!("instance {instance}: {e}"))?;
        total += ranking.len();
    }
    Ok(format!(
        "200 instances ({total} predictions) match the recount exactly"
    ))
}

// ---------------------------------------------------------------- 8

/// Desk-scale settings shared by criteria 8 and 9.
fn synth_encoder(k: usize) -> EncoderConfig {
    EncoderConfig {
        filters: 32,
        word_dim: 16,
        position_dim: 4,
        position_clip: 10,
        relations: k,
        ..Default::default()
    }
}

fn synth_train_config(
    seed: u64,
    pretrain_epochs: usize,
    checkpoint_interval: usize,
) -> TrainConfig {
    TrainConfig {
        batch_size: 10,
        pretrain_epochs,
        total_epochs: 5,
        checkpoint_interval,
        init_ratio: 0.1,
        seed,
        optimizer: OptimizerConfig {
            learning_rate: 0.02,
            ..Default::default()
        },
        ..Default::default()
    }
}

struct SplitCorpus {
    schema: RelationSchema,
    train: Vec<Bag>,
    val: Vec<Bag>,
    test: Vec<Bag>,
    vocab: Vocabulary,
}

fn synth_split(seed: u64) -> Result<SplitCorpus, String> {
    let synth = SynthConfig {
        seed,
        relations: 5,
        bags: 2000,
        min_sentences: 1,
        max_sentences: 5,
        expressive_rate: 0.5,
        na_bag_fraction: 0.4,
        ..Default::default()
    };
    let schema = synth.schema();
    let instances = synth_generate(&synth).map_err(|e| e.to_string())?;
    let bags = group_bags(&instances, BagMode::Train);
    let (rest, test) = split_validation(&bags, 0.2, seed).map_err(|e| e.to_string())?;
    let (train, val) = split_validation(&rest, 0.1, seed).map_err(|e| e.to_string())?;
    let train_instances: Vec<Instance> = train.iter().flat_map(|b| b.instances.clone()).collect();
    let vocab = Vocabulary::build(&train_instances, 16, 1, seed).map_err(|e| e.to_string())?;
    Ok(SplitCorpus {
        schema,
        train,
        val,
        test,
        vocab,
    })
}

fn test_ap(
    models: &[Model],
    test: &[Bag],
    prepared: &[PreparedBag],
    schema: &RelationSchema,
) -> Result<f64, String> {
    let out = ensemble_predict(models, prepared, Selector::ConditionalOptimal, 1)
        .map_err(|e| e.to_string())?;
    let dists: Vec<Vec<f64>> = out.into_iter().map(|o| o.distribution).collect();
    let ranking = rank_predictions(test, &dists, schema).map_err(|e| e.to_string())?;
    average_precision(&ranking, &GoldSet::from_bags(test)).map_err(|e| e.to_string())
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let (mut full_ap, mut full_acc, mut abl_ap, mut abl_acc) = (0.0, 0.0, 0.0, 0.0);
    let mut per_seed = Vec::new();
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        let data = synth_split(seed)?;
        let mut row = vec![format!("seed {seed}")];
        for (name, pretrain) in [("full", 2), ("identity", 5)] {
            let mut model = Model::new(
                synth_encoder(data.schema.len()),
                data.schema.clone(),
                data.vocab.clone(),
                seed,
            )
            .map_err(|e| e.to_string())?;
            let (tr, _) = model.prepare_bags(&data.train).map_err(|e| e.to_string())?;
            let (va, _) = model.prepare_bags(&data.val).map_err(|e| e.to_string())?;
            let (te, rejected) = model.prepare_bags(&data.test).map_err(|e| e.to_string())?;
            ensure(rejected == 0 && te.len() == data.test.len(), || {
                "test bags rejected".into()
            })?;
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            train(
                &mut model,
                &tr,
                &va,
                &synth_train_config(seed, pretrain, 1000),
                dir.path(),
            )
            .map_err(|e| e.to_string())?;
            let ap = test_ap(std::slice::from_ref(&model), &data.test, &te, &data.schema)?;
            let acc = sentence_accuracy(&model, &te, 1).map_err(|e| e.to_string())?;
            if name == "full" {
                full_ap += ap;
                full_acc += acc;
            } else {
                abl_ap += ap;
                abl_acc += acc;
            }
            row.push(format!("{name} AP {ap:.4} acc {acc:.4}"));
        }
        per_seed.push(row.join(", "));
    }
    let n = seeds.len() as f64;
    let (full_ap, full_acc, abl_ap, abl_acc) = (full_ap / n, full_acc / n, abl_ap / n, abl_acc / n);
    for line in &per_seed {
        println!("    {line}");
    }
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "mean AP full {full_ap:.4} vs identity {abl_ap:.4}; mean sentence accuracy full {full_acc:.4} vs identity {abl_acc:.4}; {secs:.1}s"
    );
    ensure(full_ap >= abl_ap, || format!("AP not improved: {summary}"))?;
    ensure(full_acc > abl_acc, || {
        format!("sentence accuracy not improved: {summary}")
    })?;
    ensure(secs < 900.0, || format!("too slow: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 9

fn bitwise_equal(a: &[SelectorOutput], b: &[SelectorOutput]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.relation == y.relation
                && x.chosen == y.chosen
                && x.distribution
                    .iter()
                    .zip(&y.distribution)
                    .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

fn criterion_9() -> Outcome {
    let seed = 4;
    let data = synth_split(seed)?;
    let mut model = Model::new(
        synth_encoder(data.schema.len()),
        data.schema.clone(),
        data.vocab.clone(),
        seed,
    )
    .map_err(|e| e.to_string())?;
    let (tr, _) = model.prepare_bags(&data.train).map_err(|e| e.to_string())?;
    let (va, _) = model.prepare_bags(&data.val).map_err(|e| e.to_string())?;
    let (te, _) = model.prepare_bags(&data.test).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let outcome = train(
        &mut model,
        &tr,
        &va,
        &synth_train_config(seed, 2, 150),
        dir.path(),
    )
    .map_err(|e| e.to_string())?;
    let last = outcome.last_checkpoints(5);
    ensure(last.len() == 5, || {
        format!("only {} checkpoints", last.len())
    })?;
    let loaded: Vec<Model> = last
        .iter()
        .map(|p| Model::load(p))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;

    for selector in [Selector::ConditionalOptimal, Selector::AvgWeighted] {
        let single: Vec<SelectorOutput> = te
            .iter()
            .map(|b| {
                selector
                    .select(&loaded[4].true_distributions(b).unwrap())
                    .unwrap()
            })
            .collect();
        for n in 1..=5 {
            let copies: Vec<Model> = (0..n).map(|_| Model::load(&last[4]).unwrap()).collect();
            let ens = ensemble_predict(&copies, &te, selector, 1).map_err(|e| e.to_string())?;
            ensure(bitwise_equal(&ens, &single), || {
                format!(
                    "{n} identical checkpoints differ from one ({})",
                    selector.name()
                )
            })?;
        }
    }

    let ens = ensemble_predict(&loaded, &te, Selector::ConditionalOptimal, 1)
        .map_err(|e| e.to_string())?;
    let mut shuffled = loaded.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let permuted = ensemble_predict(&shuffled, &te, Selector::ConditionalOptimal, 1)
        .map_err(|e| e.to_string())?;
    ensure(bitwise_equal(&ens, &permuted), || {
        "checkpoint order changes the ensemble".into()
    })?;
    let threaded = ensemble_predict(&loaded, &te, Selector::ConditionalOptimal, 4)
        .map_err(|e| e.to_string())?;
    ensure(bitwise_equal(&ens, &threaded), || {
        "thread count changes the ensemble".into()
    })?;

    let dists: Vec<Vec<f64>> = ens.iter().map(|o| o.distribution.clone()).collect();
    ensure(
        dists
            .iter()
            .all(|d| (d.iter().sum::<f64>() - 1.0).abs() < 1e-12),
        || "ensemble distribution not normalized".into(),
    )?;
    let ranking = rank_predictions(&data.test, &dists, &data.schema).map_err(|e| e.to_string())?;
    let gold = GoldSet::from_bags(&data.test);
    let triples: Vec<(String, String, String)> = data
        .test
        .iter()
        .flat_map(|b| b.instances.iter())
        .filter(|i| i.relation != "NA")
        .map(|i| (i.head.id.clone(), i.tail.id.clone(), i.relation.clone()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    check_metrics(&ranking, &gold, &triples)?;
    let ap = average_precision(&ranking, &gold).map_err(|e| e.to_string())?;
    Ok(format!(
        "1..5 identical checkpoints bitwise equal to one; 5-checkpoint ensemble ({} predictions, AP {ap:.4}) passes the metric recount",
        ranking.len()
    ))
}

// ---------------------------------------------------------------- 10

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let synth = SynthArgs {
        common: CommonArgs {
            seed: Some(3),
            ..Default::default()
        },
        bags: Some(200),
        out: Some(data.clone()),
        ..Default::default()
    };
    let corpus = cmd_synth(&synth).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<PathBuf, String> {
        let dir = tmp.path().join(name);
        let args = TrainArgs {
            common: CommonArgs {
                seed: Some(7),
                run_dir: Some(dir.display().to_string()),
                ..Default::default()
            },
            corpus: Some(corpus.corpus.display().to_string()),
            schema: Some(corpus.schema.display().to_string()),
            epochs: Some(3),
            pretrain_epochs: Some(1),
            batch_size: Some(10),
            checkpoint_interval: Some(15),
            filters: Some(16),
            word_dim: Some(12),
            position_dim: Some(3),
            position_clip: Some(10),
            learning_rate: Some(0.01),
            ..Default::default()
        };
        cmd_train(&args).map_err(|e| e.to_string())?;
        Ok(dir)
    };
    let (a, b) = (run("run_a")?, run("run_b")?);
    let (fa, fb) = (files_under(&a), files_under(&b));
    ensure(fa == fb, || format!("file lists differ: {fa:?} vs {fb:?}"))?;
    let mut compared = 0;
    for f in &fa {
        if f.as_os_str() == "config.txt" {
            continue; // records its own run directory
        }
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        ensure(x == y, || format!("{} differs between runs", f.display()))?;
        compared += 1;
    }
    let checkpoints = fa.iter().filter(|f| f.ends_with("manifest.json")).count();
    ensure(checkpoints >= 2, || {
        format!("only {checkpoints} checkpoints")
    })?;
    Ok(format!("{compared} files byte-identical across two runs, including the log and {checkpoints} checkpoints"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", criterion_1),
        ("structured transition algebra", criterion_2),
        ("loss lower bound", criterion_3),
        ("identity reduction", criterion_4),
        ("column inversion recovery", criterion_5),
        ("selector conformance", criterion_6),
        ("metric oracle equivalence", criterion_7),
        ("synthetic end-to-end", criterion_8),
        ("ensemble sanity", criterion_9),
        ("training determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
