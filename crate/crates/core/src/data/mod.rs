//! Corpora, bags, vocabularies and synthetic data.

mod bags;
mod corpus;
mod synth;
mod vocab;

pub use bags::{group_bags, split_validation, Bag, BagMode};
pub use corpus::{
    import_nyt_json, load_corpus, parse_corpus, write_corpus, Corpus, EntityMention, Instance,
    LoadMode, RelationSchema, NA_LABEL,
};
pub use synth::{noisy_fraction, synth_generate, SynthConfig};
pub use vocab::{EmbeddingStats, Vocabulary, PAD, UNK};
