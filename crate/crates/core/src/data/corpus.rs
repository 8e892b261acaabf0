use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NA_LABEL: &str = "NA";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub id: String,
    pub start: usize,
    pub end: usize,
}

/// One tokenized sentence with its entity pair and observed label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub head: EntityMention,
    pub tail: EntityMention,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_relation: Option<String>,
}

impl Instance {
    pub fn validate(&self, schema: &RelationSchema) -> Result<()> {
        let n = self.tokens.len();
        for (which, m) in [("head", &self.head), ("tail", &self.tail)] {
            if !(m.start < m.end && m.end <= n) {
                return Err(Error::Rejected(format!(
                    "{which} span [{}, {}) invalid for {n} tokens",
                    m.start, m.end
                )));
            }
        }
        if self.head.start < self.tail.end && self.tail.start < self.head.end {
            return Err(Error::Rejected("head and tail spans overlap".into()));
        }
        for label in std::iter::once(&self.relation).chain(self.true_relation.as_ref()) {
            if schema.index(label).is_none() {
                return Err(Error::Rejected(format!("unknown relation label {label:?}")));
            }
        }
        Ok(())
    }

    pub fn pair(&self) -> (&str, &str) {
        (&self.head.id, &self.tail.id)
    }
}

/// Ordered relation labels. Index 0 is always the no-relation label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "schema needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        if labels[0] != NA_LABEL {
            return Err(Error::InvalidConfig(format!(
                "first schema label must be {NA_LABEL:?}, got {:?}",
                labels[0]
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate relation label {l:?}"
                )));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::new(labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.labels).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// First invalid line aborts the load.
    #[default]
    Strict,
    /// Invalid lines are skipped and reported as warnings.
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub warnings: Vec<String>,
}

fn parse_line(line: &str, lineno: usize, schema: &RelationSchema) -> Result<Instance> {
    let inst: Instance = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    for label in std::iter::once(&inst.relation).chain(inst.true_relation.as_ref()) {
        if schema.index(label).is_none() {
            return Err(Error::UnknownRelation {
                line: lineno,
                label: label.clone(),
            });
        }
    }
    inst.validate(schema).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    Ok(inst)
}

pub fn parse_corpus<R: BufRead>(
    reader: R,
    schema: &RelationSchema,
    mode: LoadMode,
) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, lineno, schema) {
            Ok(inst) => corpus.instances.push(inst),
            Err(e) if mode == LoadMode::Lenient => {
                warn!("skipping {e}");
                corpus.warnings.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(corpus)
}

pub fn load_corpus(path: &Path, schema: &RelationSchema, mode: LoadMode) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), schema, mode)
}

pub fn write_corpus(path: &Path, instances: &[Instance]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct NytEntity {
    word: String,
    id: String,
}

#[derive(Deserialize)]
struct NytRecord {
    sentence: String,
    head: NytEntity,
    tail: NytEntity,
    relation: String,
}

fn find_span(
    tokens: &[String],
    phrase: &str,
    taken: Option<(usize, usize)>,
) -> Option<(usize, usize)> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if words.is_empty() || words.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - words.len())
        .filter(|&s| {
            let e = s + words.len();
            taken.is_none_or(|(ts, te)| e <= ts || s >= te)
        })
        .find(|&s| {
            tokens[s..s + words.len()]
                .iter()
                .zip(&words)
                .all(|(t, w)| t == w)
        })
        .map(|s| (s, s + words.len()))
}

/// Best-effort import of the widely distributed preprocessed NYT JSON
/// (a single array of `{sentence, head: {word, id}, tail: {word, id},
/// relation}` records). Records whose entities cannot be located in the
/// whitespace-tokenized sentence, or whose relation is not in `schema`, are
/// skipped and reported.
pub fn import_nyt_json(path: &Path, schema: &RelationSchema) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<NytRecord> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let mut corpus = Corpus::default();
    for (i, r) in records.into_iter().enumerate() {
        let tokens: Vec<String> = r
            .sentence
            .split_whitespace()
            .filter(|t| *t != "###END###")
            .map(str::to_string)
            .collect();
        let head = find_span(&tokens, &r.head.word, None);
        let tail = head.and_then(|h| find_span(&tokens, &r.tail.word, Some(h)));
        let (Some(h), Some(t)) = (head, tail) else {
            corpus
                .warnings
                .push(format!("record {i}: entity mention not found"));
            continue;
        };
        let inst = Instance {
            tokens,
            head: EntityMention {
                id: r.head.id,
                start: h.0,
                end: h.1,
            },
            tail: EntityMention {
                id: r.tail.id,
                start: t.0,
                end: t.1,
            },
            relation: r.relation,
            true_relation: None,
        };
        match inst.validate(schema) {
            Ok(()) => corpus.instances.push(inst),
            Err(e) => corpus.warnings.push(format!("record {i}: {e}")),
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> RelationSchema {
        RelationSchema::new(vec!["NA".into(), "born_in".into(), "works_for".into()]).unwrap()
    }

    const VALID: &str = r#"{"tokens":["Ann","was","born","in","Paris"],"head":{"id":"m.ann","start":0,"end":1},"tail":{"id":"m.paris","start":4,"end":5},"relation":"NA"}"#;

    #[test]
    fn one_valid_line() {
        let c = parse_corpus(VALID.as_bytes(), &schema(), LoadMode::Strict).unwrap();
        assert_eq!(c.instances.len(), 1);
        assert_eq!(c.instances[0].relation, "NA");
    }

    #[test]
    fn unknown_relation_names_label_and_line() {
        let text = format!("{VALID}\n{}", VALID.replace("\"NA\"", "\"lives_on\""));
        let err = parse_corpus(text.as_bytes(), &schema(), LoadMode::Strict).unwrap_err();
        match err {
            Error::UnknownRelation { line, label } => {
                assert_eq!(line, 2);
                assert_eq!(label, "lives_on");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_span_rejected() {
        let bad = VALID.replace(r#""start":4,"end":5"#, r#""start":4,"end":9"#);
        let err = parse_corpus(bad.as_bytes(), &schema(), LoadMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let overlap = VALID.replace(r#""start":4,"end":5"#, r#""start":0,"end":2"#);
        assert!(parse_corpus(overlap.as_bytes(), &schema(), LoadMode::Strict).is_err());
    }

    #[test]
    fn lenient_mode_skips_and_warns() {
        let mut lines = vec![VALID.to_string(); 10];
        lines[3] = "{not json".into();
        lines[7] = VALID.replace("\"NA\"", "\"bogus\"");
        let text = lines.join("\n");
        let c = parse_corpus(text.as_bytes(), &schema(), LoadMode::Lenient).unwrap();
        assert_eq!(c.instances.len(), 8);
        assert_eq!(c.warnings.len(), 2);
        assert!(c.warnings[1].contains("bogus"));
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = parse_corpus("".as_bytes(), &schema(), LoadMode::Strict).unwrap();
        assert!(c.instances.is_empty());
    }

    #[test]
    fn schema_rules() {
        assert!(RelationSchema::new(vec!["NA".into()]).is_err());
        assert!(RelationSchema::new(vec!["x".into(), "NA".into()]).is_err());
        assert!(RelationSchema::new(vec!["NA".into(), "a".into(), "a".into()]).is_err());
    }

    #[test]
    fn nyt_import_locates_entities() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nyt.json");
        std::fs::write(
            &path,
            r#"[{"sentence":"the company of new york said ###END###","head":{"word":"company","id":"m.1"},"tail":{"word":"new york","id":"m.2"},"relation":"works_for"},
               {"sentence":"nothing here","head":{"word":"absent","id":"m.3"},"tail":{"word":"here","id":"m.4"},"relation":"NA"}]"#,
        )
        .unwrap();
        let c = import_nyt_json(&path, &schema()).unwrap();
        assert_eq!(c.instances.len(), 1);
        assert_eq!(c.warnings.len(), 1);
        let i = &c.instances[0];
        assert_eq!((i.head.start, i.head.end), (1, 2));
        assert_eq!((i.tail.start, i.tail.end), (3, 5));
    }
}
