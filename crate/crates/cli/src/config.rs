//! The resolved run configuration and its `key = value` text form.
//!
//! Values are resolved in order: built-in defaults, the `--config` file,
//! `NOISYRE_RUN_DIR` for the output directory, then command-line flags.
//! The fully resolved view is written back in the same text form, so
//! feeding that file to `--config` reproduces the run.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use noisyre::data::SynthConfig;
use noisyre::encoder::EncoderConfig;
use noisyre::trainer::TrainConfig;

pub const RUN_DIR_ENV: &str = "NOISYRE_RUN_DIR";
pub const RESOLVED_CONFIG: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub corpus: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Separate validation corpus; when absent a pair-level split of the
    /// training corpus is used.
    pub validation: Option<PathBuf>,
    pub validation_fraction: f64,
    pub embeddings: Option<PathBuf>,
    pub min_count: usize,
    pub run_dir: PathBuf,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            corpus: None,
            schema: None,
            validation: None,
            validation_fraction: 0.1,
            embeddings: None,
            min_count: 1,
            run_dir: PathBuf::from("runs/default"),
            threads: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (e, t, s) = (&mut self.encoder, &mut self.train, &mut self.synth);
        match key {
            "corpus" => self.corpus = path(v),
            "schema" => self.schema = path(v),
            "validation" => self.validation = path(v),
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            "embeddings" => self.embeddings = path(v),
            "min_count" => self.min_count = parse(key, v)?,
            "run_dir" => self.run_dir = PathBuf::from(v),
            "threads" => self.threads = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "window" => e.window = parse(key, v)?,
            "filters" => e.filters = parse(key, v)?,
            "word_dim" => e.word_dim = parse(key, v)?,
            "position_dim" => e.position_dim = parse(key, v)?,
            "max_len" => e.max_len = parse(key, v)?,
            "position_clip" => e.position_clip = parse(key, v)?,
            "dropout_rate" => e.dropout_rate = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "pretrain_epochs" => t.pretrain_epochs = parse(key, v)?,
            "epochs" => t.total_epochs = parse(key, v)?,
            "checkpoint_interval" => t.checkpoint_interval = parse(key, v)?,
            "init_ratio" => t.init_ratio = parse(key, v)?,
            "ensemble_size" => t.ensemble_size = parse(key, v)?,
            "reinit_transition" => t.reinit_transition = parse(key, v)?,
            "learning_rate" => t.optimizer.learning_rate = parse(key, v)?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, v)?,
            "beta1" => t.optimizer.beta1 = parse(key, v)?,
            "beta2" => t.optimizer.beta2 = parse(key, v)?,
            "epsilon" => t.optimizer.epsilon = parse(key, v)?,
            "relations" => s.relations = parse(key, v)?,
            "synth_vocab_size" => s.vocab_size = parse(key, v)?,
            "bags" => s.bags = parse(key, v)?,
            "min_sentences" => s.min_sentences = parse(key, v)?,
            "max_sentences" => s.max_sentences = parse(key, v)?,
            "rho" => s.expressive_rate = parse(key, v)?,
            "na_fraction" => s.na_bag_fraction = parse(key, v)?,
            "typed_na_fraction" => s.typed_na_fraction = parse(key, v)?,
            "entity_pool" => s.entity_pool = parse(key, v)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (e, t, s) = (&self.encoder, &self.train, &self.synth);
        vec![
            ("corpus", show(&self.corpus)),
            ("schema", show(&self.schema)),
            ("validation", show(&self.validation)),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("embeddings", show(&self.embeddings)),
            ("min_count", self.min_count.to_string()),
            ("run_dir", self.run_dir.display().to_string()),
            ("threads", self.threads.to_string()),
            ("seed", t.seed.to_string()),
            ("window", e.window.to_string()),
            ("filters", e.filters.to_string()),
            ("word_dim", e.word_dim.to_string()),
            ("position_dim", e.position_dim.to_string()),
            ("max_len", e.max_len.to_string()),
            ("position_clip", e.position_clip.to_string()),
            ("dropout_rate", e.dropout_rate.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("pretrain_epochs", t.pretrain_epochs.to_string()),
            ("epochs", t.total_epochs.to_string()),
            ("checkpoint_interval", t.checkpoint_interval.to_string()),
            ("init_ratio", t.init_ratio.to_string()),
            ("ensemble_size", t.ensemble_size.to_string()),
            ("reinit_transition", t.reinit_transition.to_string()),
            ("learning_rate", t.optimizer.learning_rate.to_string()),
            ("weight_decay", t.optimizer.weight_decay.to_string()),
            ("beta1", t.optimizer.beta1.to_string()),
            ("beta2", t.optimizer.beta2.to_string()),
            ("epsilon", t.optimizer.epsilon.to_string()),
            ("relations", s.relations.to_string()),
            ("synth_vocab_size", s.vocab_size.to_string()),
            ("bags", s.bags.to_string()),
            ("min_sentences", s.min_sentences.to_string()),
            ("max_sentences", s.max_sentences.to_string()),
            ("rho", s.expressive_rate.to_string()),
            ("na_fraction", s.na_bag_fraction.to_string()),
            ("typed_na_fraction", s.typed_na_fraction.to_string()),
            ("entity_pool", s.entity_pool.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Applies every `key = value` line of `text`. Blank lines and text after
    /// `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got {raw:?}", n + 1);
            };
            self.set(key.trim(), value)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| noisyre::Error::io(path, e))?;
        self.apply_text(&text)
            .with_context(|| format!("config file {}", path.display()))
    }

    /// Defaults, then `file`, then the environment, then `overrides`.
    pub fn resolve(
        file: Option<&Path>,
        env_run_dir: Option<String>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut config = Self::default();
        if let Some(f) = file {
            config.apply_file(f)?;
        }
        if let Some(dir) = env_run_dir.filter(|d| !d.is_empty()) {
            config.run_dir = PathBuf::from(dir);
        }
        for (k, v) in overrides {
            config.set(k, v)?;
        }
        Ok(config)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_text()).map_err(|e| noisyre::Error::io(&path, e))?;
        Ok(path)
    }
}
