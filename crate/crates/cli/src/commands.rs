//! One function per subcommand. Each returns enough of its result for the
//! integration tests to inspect without re-reading files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use noisyre::data::{
    group_bags, load_corpus, noisy_fraction, split_validation, synth_generate, write_corpus, Bag,
    BagMode, Instance, LoadMode, RelationSchema, Vocabulary,
};
use noisyre::metrics::{pr_curve, rank_predictions, write_pr_csv, GoldSet, MetricsSummary};
use noisyre::noise::write_column_csv;
use noisyre::selector::{multi_label_predict, Selector, SelectorOutput};
use noisyre::selfcheck::{self, CheckResult};
use noisyre::trainer::{ensemble_predict, train, TrainOutcome, CHECKPOINT_DIR, LOG_FILE};
use noisyre::{Model, PreparedBag};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RUN_DIR_ENV};
use crate::{
    CheckpointArgs, CommonArgs, EvalArgs, ExitError, GradCheckArgs, PredictArgs, SelfcheckArgs,
    SynthArgs, TrainArgs,
};

pub const TRANSITION_CSV: &str = "transition.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const PR_CSV: &str = "pr_curve.csv";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";

/// Ranks reported in `metrics.json`.
pub const P_AT: [usize; 3] = [100, 200, 300];

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key.to_string(), v.to_string()));
    }
}

fn common_overrides(c: &CommonArgs, out: &mut Vec<(String, String)>) {
    push(out, "seed", &c.seed);
    push(out, "threads", &c.threads);
    push(out, "run_dir", &c.run_dir);
}

fn resolve(common: &CommonArgs, overrides: Vec<(String, String)>) -> Result<RunConfig> {
    let env = std::env::var(RUN_DIR_ENV).ok();
    RunConfig::resolve(common.config.as_deref(), env, &overrides)
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.clone().ok_or_else(|| {
        ExitError::new(
            2,
            format!("no {what} given (flag --{what} or `{what} =` in the config file)"),
        )
    })?;
    if !p.exists() {
        return Err(ExitError::new(2, format!("{what} file not found: {}", p.display())).into());
    }
    Ok(p)
}

fn load_schema(path: &Path) -> Result<RelationSchema> {
    if !path.exists() {
        return Err(ExitError::new(2, format!("schema file not found: {}", path.display())).into());
    }
    Ok(RelationSchema::load(path)?)
}

fn load_instances(path: &Path, schema: &RelationSchema) -> Result<Vec<Instance>> {
    if !path.exists() {
        return Err(ExitError::new(2, format!("corpus file not found: {}", path.display())).into());
    }
    let corpus = load_corpus(path, schema, LoadMode::Strict)?;
    for w in &corpus.warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(corpus.instances)
}

/// What `train` produced.
#[derive(Debug)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub config: RunConfig,
    pub outcome: TrainOutcome,
}

pub fn train_overrides(a: &TrainArgs) -> Result<Vec<(String, String)>> {
    let mut o = Vec::new();
    common_overrides(&a.common, &mut o);
    push(&mut o, "corpus", &a.corpus);
    push(&mut o, "schema", &a.schema);
    push(&mut o, "validation", &a.validation);
    push(&mut o, "validation_fraction", &a.validation_fraction);
    push(&mut o, "embeddings", &a.embeddings);
    push(&mut o, "min_count", &a.min_count);
    push(&mut o, "epochs", &a.epochs);
    push(&mut o, "pretrain_epochs", &a.pretrain_epochs);
    push(&mut o, "batch_size", &a.batch_size);
    push(&mut o, "checkpoint_interval", &a.checkpoint_interval);
    push(&mut o, "learning_rate", &a.learning_rate);
    push(&mut o, "weight_decay", &a.weight_decay);
    push(&mut o, "init_ratio", &a.init_ratio);
    push(&mut o, "reinit_transition", &a.reinit_transition);
    push(&mut o, "dropout_rate", &a.dropout_rate);
    push(&mut o, "window", &a.window);
    push(&mut o, "filters", &a.filters);
    push(&mut o, "word_dim", &a.word_dim);
    push(&mut o, "position_dim", &a.position_dim);
    push(&mut o, "max_len", &a.max_len);
    push(&mut o, "position_clip", &a.position_clip);
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ExitError::new(2, format!("--set expects KEY=VALUE, got {kv:?}")))?;
        o.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(o)
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainReport> {
    let cfg = resolve(&a.common, train_overrides(a)?)?;
    let corpus_path = require(&cfg.corpus, "corpus")?;
    let schema_path = require(&cfg.schema, "schema")?;
    let seed = cfg.train.seed;
    let schema = load_schema(&schema_path)?;
    let instances = load_instances(&corpus_path, &schema)?;
    let bags = group_bags(&instances, BagMode::Train);
    let (train_bags, val_bags) = match &cfg.validation {
        Some(v) => (
            bags,
            group_bags(&load_instances(v, &schema)?, BagMode::Train),
        ),
        None => split_validation(&bags, cfg.validation_fraction, seed)?,
    };
    info!(
        "{} training bags, {} validation bags",
        train_bags.len(),
        val_bags.len()
    );

    let train_instances: Vec<Instance> = train_bags
        .iter()
        .flat_map(|b| b.instances.iter().cloned())
        .collect();
    let mut vocab = Vocabulary::build(&train_instances, cfg.encoder.word_dim, cfg.min_count, seed)?;
    if let Some(p) = &cfg.embeddings {
        let stats = vocab.load_pretrained_embeddings(p)?;
        info!(
            "word vectors: {} from {}, {} random",
            stats.from_file,
            p.display(),
            stats.random
        );
    }
    let mut encoder = cfg.encoder.clone();
    encoder.relations = schema.len();
    let mut model = Model::new(encoder, schema.clone(), vocab, seed)?;
    let (train_prepared, r1) = model.prepare_bags(&train_bags)?;
    let (val_prepared, r2) = model.prepare_bags(&val_bags)?;
    if r1 + r2 > 0 {
        warn!("{} sentences rejected (entity beyond max_len)", r1 + r2);
    }

    let run_dir = cfg.run_dir.clone();
    let ckpt = run_dir.join(CHECKPOINT_DIR);
    if ckpt
        .read_dir()
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
    {
        return Err(ExitError::new(
            2,
            format!(
                "{} already holds checkpoints; choose a fresh run directory",
                ckpt.display()
            ),
        )
        .into());
    }
    fs::create_dir_all(&run_dir).map_err(|e| noisyre::Error::io(&run_dir, e))?;
    cfg.write(&run_dir)?;
    let outcome = train(
        &mut model,
        &train_prepared,
        &val_prepared,
        &cfg.train,
        &run_dir,
    )?;
    write_column_csv(
        &run_dir.join(TRANSITION_CSV),
        &schema,
        &model.transition_matrix().column,
    )?;
    let best = outcome.best_record();
    println!(
        "trained {} steps; best checkpoint {} (validation accuracy {:.4})",
        model.store.step,
        best.path.display(),
        best.val_accuracy
    );
    Ok(TrainReport {
        run_dir,
        config: cfg,
        outcome,
    })
}

#[derive(Deserialize)]
struct LogEntry {
    val_accuracy: f64,
    path: PathBuf,
}

/// Checkpoint directories of a run, oldest first.
pub fn list_checkpoints(run: &Path) -> Result<Vec<PathBuf>> {
    let dir = run.join(CHECKPOINT_DIR);
    let mut out: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(noisyre::checkpoint::MANIFEST).is_file())
            .collect(),
        Err(_) => Vec::new(),
    };
    out.sort();
    Ok(out)
}

/// Earliest checkpoint with the highest logged validation accuracy.
fn best_checkpoint(run: &Path) -> Result<Option<PathBuf>> {
    let log = run.join(LOG_FILE);
    let Ok(file) = fs::File::open(&log) else {
        return Ok(None);
    };
    let mut best: Option<LogEntry> = None;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| noisyre::Error::io(&log, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry =
            serde_json::from_str(&line).map_err(|e| noisyre::Error::json(&log, e))?;
        if best
            .as_ref()
            .is_none_or(|b| entry.val_accuracy > b.val_accuracy)
        {
            best = Some(entry);
        }
    }
    Ok(best.map(|b| run.join(b.path)))
}

/// The checkpoint directories selected by `--checkpoint`, `--run` and
/// `--ensemble-last`.
pub fn select_checkpoints(a: &CheckpointArgs) -> Result<Vec<PathBuf>> {
    let none = |what: &str| ExitError::new(3, format!("no checkpoints found {what}"));
    if !a.checkpoints.is_empty() {
        for c in &a.checkpoints {
            if !c.join(noisyre::checkpoint::MANIFEST).is_file() {
                return Err(none(&format!("at {}", c.display())).into());
            }
        }
        return Ok(a.checkpoints.clone());
    }
    let Some(run) = &a.run else {
        return Err(ExitError::new(2, "give --checkpoint or --run").into());
    };
    let all = list_checkpoints(run)?;
    if all.is_empty() {
        return Err(none(&format!("under {}", run.join(CHECKPOINT_DIR).display())).into());
    }
    match a.ensemble_last {
        Some(0) => Err(ExitError::new(2, "--ensemble-last must be at least 1").into()),
        Some(n) => Ok(all[all.len().saturating_sub(n)..].to_vec()),
        None => Ok(vec![
            best_checkpoint(run)?.unwrap_or_else(|| all[all.len() - 1].clone())
        ]),
    }
}

/// Loads the selected models and checks them against each other and the
/// schema.
fn load_models(a: &CheckpointArgs, schema: Option<&Path>) -> Result<(Vec<Model>, RelationSchema)> {
    let paths = select_checkpoints(a)?;
    let mut models = Vec::with_capacity(paths.len());
    for p in &paths {
        models.push(Model::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?);
    }
    let schema = match schema {
        Some(p) => load_schema(p)?,
        None => models[0].schema.clone(),
    };
    for (m, p) in models.iter().zip(&paths) {
        if m.schema != schema {
            return Err(ExitError::new(
                3,
                format!(
                    "checkpoint {} has K={} relations but the schema has K={}{}",
                    p.display(),
                    m.k(),
                    schema.len(),
                    if m.k() == schema.len() {
                        " (labels differ)"
                    } else {
                        ""
                    }
                ),
            )
            .into());
        }
        if m.vocab.tokens() != models[0].vocab.tokens() {
            return Err(ExitError::new(
                3,
                format!("checkpoint {} uses a different vocabulary", p.display()),
            )
            .into());
        }
    }
    info!("{} checkpoint(s): {:?}", paths.len(), paths);
    Ok((models, schema))
}

fn parse_selector(s: &str) -> Result<Selector> {
    s.parse::<Selector>()
        .map_err(|e| ExitError::new(2, e.to_string()).into())
}

/// Test bags that survived preparation, with their predictions.
struct Predictions {
    bags: Vec<Bag>,
    prepared: Vec<PreparedBag>,
    outputs: Vec<SelectorOutput>,
    schema: RelationSchema,
    models: Vec<Model>,
}

fn predict(a: &CheckpointArgs, corpus: &Path, schema: Option<&Path>) -> Result<Predictions> {
    let selector = parse_selector(&a.selector)?;
    let (models, schema) = load_models(a, schema)?;
    let instances = load_instances(corpus, &schema)?;
    let bags = group_bags(&instances, BagMode::Eval);
    let (prepared, rejected) = models[0].prepare_bags(&bags)?;
    if rejected > 0 {
        warn!("{rejected} test sentences rejected (entity beyond max_len)");
    }
    // bags whose every sentence was rejected are dropped by prepare_bags
    let kept: Vec<Bag> = bags
        .into_iter()
        .filter(|b| {
            prepared
                .binary_search_by(|p| (p.head_id.as_str(), p.tail_id.as_str()).cmp(&b.pair()))
                .is_ok()
        })
        .collect();
    let outputs = ensemble_predict(&models, &prepared, selector, a.threads)?;
    Ok(Predictions {
        bags: kept,
        prepared,
        outputs,
        schema,
        models,
    })
}

#[derive(Deserialize)]
struct GoldLine {
    head: String,
    tail: String,
    relation: String,
}

fn load_gold(path: &Path) -> Result<GoldSet> {
    if !path.exists() {
        return Err(ExitError::new(2, format!("gold file not found: {}", path.display())).into());
    }
    let file = fs::File::open(path).map_err(|e| noisyre::Error::io(path, e))?;
    let mut gold = GoldSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| noisyre::Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GoldLine = serde_json::from_str(&line).map_err(|e| noisyre::Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        gold.insert(&g.head, &g.tail, &g.relation);
    }
    Ok(gold)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricsSummary> {
    let Predictions {
        bags,
        outputs,
        schema,
        ..
    } = predict(&a.model, &a.corpus, a.schema.as_deref())?;
    let gold = match &a.gold {
        Some(p) => load_gold(p)?,
        None => GoldSet::from_bags(&bags),
    };
    let dists: Vec<Vec<f64>> = outputs.into_iter().map(|o| o.distribution).collect();
    let ranking = rank_predictions(&bags, &dists, &schema)?;
    let summary = MetricsSummary::compute(&ranking, &gold, &P_AT)?;
    let curve = pr_curve(&ranking, &gold)?;
    fs::create_dir_all(&a.out).map_err(|e| noisyre::Error::io(&a.out, e))?;
    summary.write_json(&a.out.join(METRICS_JSON))?;
    write_pr_csv(&a.out.join(PR_CSV), &curve)?;
    let p_at: Vec<String> = summary
        .p_at
        .iter()
        .map(|(n, p)| format!("P@{n} {p:.4}"))
        .collect();
    println!("{} | AP {:.4}", p_at.join(" "), summary.average_precision);
    Ok(summary)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    head_id: &'a str,
    tail_id: &'a str,
    relation: &'a str,
    score: f64,
    distribution: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<&'a str>>,
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let Predictions {
        prepared,
        outputs,
        schema,
        models,
        ..
    } = predict(&a.model, &a.corpus, a.schema.as_deref())?;
    if let Some(t) = a.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(ExitError::new(2, format!("threshold must be in (0,1), got {t}")).into());
        }
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| noisyre::Error::io(dir, e))?;
    }
    let file = fs::File::create(&a.out).map_err(|e| noisyre::Error::io(&a.out, e))?;
    let mut w = BufWriter::new(file);
    for (bag, out) in prepared.iter().zip(&outputs) {
        let k = out.predicted_label();
        let labels = match a.threshold {
            Some(t) => {
                // sentence distributions averaged over the ensemble, as for the selector
                let mut per_sentence = vec![vec![0.0; schema.len()]; bag.instances.len()];
                for m in &models {
                    for (acc, d) in per_sentence.iter_mut().zip(m.true_distributions(bag)?) {
                        acc.iter_mut()
                            .zip(d)
                            .for_each(|(a, p)| *a += p / models.len() as f64);
                    }
                }
                let set = multi_label_predict(&per_sentence, t)?;
                Some(set.into_iter().map(|r| schema.label(r)).collect())
            }
            None => None,
        };
        let line = PredictionLine {
            head_id: &bag.head_id,
            tail_id: &bag.tail_id,
            relation: schema.label(k),
            score: out.distribution[k],
            distribution: &out.distribution,
            labels,
        };
        let text = serde_json::to_string(&line).map_err(|e| noisyre::Error::json(&a.out, e))?;
        writeln!(w, "{text}").map_err(|e| noisyre::Error::io(&a.out, e))?;
    }
    w.flush().map_err(|e| noisyre::Error::io(&a.out, e))?;
    println!(
        "{} predictions written to {}",
        prepared.len(),
        a.out.display()
    );
    Ok(())
}

/// Paths written by `synth`.
#[derive(Debug)]
pub struct SynthReport {
    pub corpus: PathBuf,
    pub schema: PathBuf,
    pub instances: usize,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<SynthReport> {
    let mut o = Vec::new();
    common_overrides(&a.common, &mut o);
    push(&mut o, "rho", &a.rho);
    push(&mut o, "bags", &a.bags);
    push(&mut o, "relations", &a.relations);
    push(&mut o, "na_fraction", &a.na_fraction);
    push(&mut o, "typed_na_fraction", &a.typed_na_fraction);
    push(&mut o, "min_sentences", &a.min_sentences);
    push(&mut o, "max_sentences", &a.max_sentences);
    push(&mut o, "synth_vocab_size", &a.vocab_size);
    push(&mut o, "entity_pool", &a.entity_pool);
    let cfg = resolve(&a.common, o)?;
    let mut synth = cfg.synth.clone();
    synth.seed = cfg.train.seed;
    synth
        .validate()
        .map_err(|e| ExitError::new(2, e.to_string()))?;
    let out = a.out.clone().unwrap_or_else(|| cfg.run_dir.clone());
    fs::create_dir_all(&out).map_err(|e| noisyre::Error::io(&out, e))?;
    let instances = synth_generate(&synth)?;
    let corpus = out.join(CORPUS_FILE);
    let schema = out.join(SCHEMA_FILE);
    write_corpus(&corpus, &instances)?;
    synth.schema().save(&schema)?;
    let noisy = noisy_fraction(&instances)
        .map(|f| format!("{f:.3}"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{} sentences in {} bags ({} of positive-bag sentences noisy) -> {}",
        instances.len(),
        synth.bags,
        noisy,
        corpus.display()
    );
    Ok(SynthReport {
        corpus,
        schema,
        instances: instances.len(),
    })
}

fn print_checks(results: &[CheckResult]) -> bool {
    let mut ok = true;
    for r in results {
        ok &= r.passed();
        println!(
            "{:4} {:20} trials {:5} failures {:4} worst {:.3e} (tolerance {:.0e})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.trials,
            r.failures,
            r.worst,
            r.tolerance
        );
    }
    ok
}

pub fn cmd_selfcheck(a: &SelfcheckArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(ExitError::new(2, "--trials must be at least 1").into());
    }
    let results = selfcheck::run_all(a.trials, a.seed)?;
    if print_checks(&results) {
        Ok(())
    } else {
        Err(ExitError::new(1, "self-check failed").into())
    }
}

pub fn cmd_grad_check(a: &GradCheckArgs) -> Result<()> {
    let report = selfcheck::gradient_report(a.seed, a.step, a.tolerance)?;
    for p in &report.params {
        println!(
            "{:4} {:32} elements {:5} max relative error {:.3e}",
            if p.max_relative_error < a.tolerance {
                "ok"
            } else {
                "BAD"
            },
            p.name,
            p.elements,
            p.max_relative_error
        );
    }
    if report.flagged() {
        Err(ExitError::new(
            1,
            format!(
                "gradient check failed: max relative error {:.3e}",
                report.max_relative_error()
            ),
        )
        .into())
    } else {
        println!(
            "gradient check passed: max relative error {:.3e}",
            report.max_relative_error()
        );
        Ok(())
    }
}
