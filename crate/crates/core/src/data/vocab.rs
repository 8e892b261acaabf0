use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::Instance;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Half-width of the uniform range used for word vectors not covered by a
/// pre-trained file.
pub const INIT_RANGE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Initial word vectors, `|V| × dim`. Row [`PAD`] is all zero.
    pub embeddings: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmbeddingStats {
    /// Ordinary (non-special) tokens whose vector came from the file.
    pub from_file: usize,
    /// Ordinary tokens left with a random vector.
    pub random: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from corpus tokens occurring at least `min_count`
    /// times, ordered by descending frequency then lexicographically. Word
    /// vectors are drawn uniformly from `[-0.25, 0.25]`.
    pub fn build(instances: &[Instance], dim: usize, min_count: usize, seed: u64) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for inst in instances {
            for t in &inst.tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count.max(1) && w != PAD_TOKEN && w != UNK_TOKEN)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(words.into_iter().map(|(w, _)| w))
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens, dim, seed)
    }

    /// Vocabulary over an explicit token list whose first two entries are the
    /// padding and unknown tokens.
    pub fn from_tokens(tokens: Vec<String>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension must be positive".into(),
            ));
        }
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::InvalidConfig(
                "vocabulary must start with <pad> and <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = Tensor::from_fn(&[tokens.len(), dim], |_| {
            rng.gen_range(-INIT_RANGE..=INIT_RANGE)
        });
        embeddings.row_mut(PAD).fill(0.0);
        Ok(Self {
            tokens,
            index,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Index of `token`, or [`UNK`].
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Overwrites the vectors of tokens listed in a `token v1 .. vd` text
    /// file. Rows not in the file keep their random initialization.
    pub fn load_pretrained_embeddings(&mut self, path: &Path) -> Result<EmbeddingStats> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let dim = self.dim();
        let mut covered = vec![false; self.len()];
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("{v:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::EmbeddingDim {
                    expected: dim,
                    found: values.len(),
                });
            }
            if let Some(&row) = self.index.get(token) {
                if row == PAD {
                    continue;
                }
                self.embeddings.row_mut(row).copy_from_slice(&values);
                covered[row] = true;
            }
        }
        let ordinary = &covered[UNK + 1..];
        let from_file = ordinary.iter().filter(|&&c| c).count();
        Ok(EmbeddingStats {
            from_file,
            random: ordinary.len() - from_file,
        })
    }

    /// One token per line; the line number is the index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load_tokens(path: &Path, dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect(), dim, 0)
    }
}
