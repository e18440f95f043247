//! Proxy tasks: a QA set plus a retrieval corpus, loaded from line-delimited
//! JSON files, and synthetic tabular landscapes for exercising controllers.

mod synthetic;

pub use synthetic::{PairwiseTerm, SyntheticEnvironment, SyntheticError, SyntheticSpec, ENUMERATION_BOUND};

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Record { file: String, line: usize, message: String },
    #[error("{0} contains no records")]
    Empty(String),
    #[error("subset size {n} outside 1..={available}")]
    SubsetSize { n: usize, available: usize },
    #[error("{file} digest changed: expected {expected}, found {found}")]
    DigestMismatch { file: String, expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    /// Reference answers; never empty.
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
    /// Carried through for multimodal corpora; the text pipeline ignores it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
        }
    }
}

/// How [`Environment::subsample`] picks items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMode {
    /// Seeded uniform shuffle, then the first `n`.
    #[default]
    ShuffleThenPrefix,
    /// The first `n` items as stored; the seed is ignored.
    StoredOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub name: String,
    pub qa: Vec<QAItem>,
    pub corpus: Vec<CorpusDoc>,
    pub qa_file_hash: String,
    pub corpus_file_hash: String,
    pub modality: Modality,
}

// On-disk record layouts.
#[derive(Deserialize)]
struct QaRecord {
    id: Option<serde_json::Value>,
    question: Option<String>,
    answers: Option<Vec<String>>,
}

#[derive(Serialize)]
struct QaRecordOut<'a> {
    id: &'a str,
    question: &'a str,
    answers: &'a [String],
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
    image_path: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn id_string(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Some(s),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_qa(file: &str, bytes: &[u8]) -> Result<Vec<QAItem>, LoadError> {
    let text = std::str::from_utf8(bytes).map_err(|e| LoadError::Record {
        file: file.to_string(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LoadError::Record { file: file.to_string(), line: line_no, message };
        let rec: QaRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let id = rec.id.and_then(id_string).ok_or_else(|| err("missing field `id`".into()))?;
        let question = rec.question.ok_or_else(|| err(format!("record `{id}`: missing field `question`")))?;
        if question.trim().is_empty() {
            return Err(err(format!("record `{id}`: empty question")));
        }
        let references = rec.answers.ok_or_else(|| err(format!("record `{id}`: missing field `answers`")))?;
        if references.is_empty() {
            return Err(err(format!("record `{id}`: empty answers")));
        }
        out.push(QAItem { id, question, references });
    }
    if out.is_empty() {
        return Err(LoadError::Empty(file.to_string()));
    }
    Ok(out)
}

fn parse_corpus(file: &str, bytes: &[u8]) -> Result<Vec<CorpusDoc>, LoadError> {
    let text = std::str::from_utf8(bytes).map_err(|e| LoadError::Record {
        file: file.to_string(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LoadError::Record { file: file.to_string(), line: line_no, message };
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let id = rec.id.and_then(id_string).ok_or_else(|| err("missing field `id`".into()))?;
        let text = rec.text.ok_or_else(|| err(format!("record `{id}`: missing field `text`")))?;
        if text.trim().is_empty() {
            return Err(err(format!("record `{id}`: empty text")));
        }
        if !seen.insert(id.clone()) {
            return Err(err(format!("duplicate corpus id `{id}`")));
        }
        out.push(CorpusDoc { id, text, image_path: rec.image_path });
    }
    if out.is_empty() {
        return Err(LoadError::Empty(file.to_string()));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>, LoadError> {
    std::fs::read(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })
}

/// Loads a QA file and a corpus file. The environment is named after the QA
/// file stem.
pub fn load_environment(qa_path: &Path, corpus_path: &Path) -> Result<Environment, LoadError> {
    let name = qa_path
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".qa").to_string())
        .unwrap_or_else(|| "env".to_string());
    Environment::from_bytes(
        &name,
        &qa_path.display().to_string(),
        &read(qa_path)?,
        &corpus_path.display().to_string(),
        &read(corpus_path)?,
    )
}

impl Environment {
    pub fn from_bytes(
        name: &str,
        qa_file: &str,
        qa_bytes: &[u8],
        corpus_file: &str,
        corpus_bytes: &[u8],
    ) -> Result<Environment, LoadError> {
        Ok(Environment {
            name: name.to_string(),
            qa: parse_qa(qa_file, qa_bytes)?,
            corpus: parse_corpus(corpus_file, corpus_bytes)?,
            qa_file_hash: sha256_hex(qa_bytes),
            corpus_file_hash: sha256_hex(corpus_bytes),
            modality: Modality::Text,
        })
    }

    /// Builds an environment from in-memory records, hashing their
    /// serialized form.
    pub fn from_records(name: &str, qa: Vec<QAItem>, corpus: Vec<CorpusDoc>) -> Result<Environment, LoadError> {
        let mut env = Environment {
            name: name.to_string(),
            qa,
            corpus,
            qa_file_hash: String::new(),
            corpus_file_hash: String::new(),
            modality: Modality::Text,
        };
        // validate through the same parser as on-disk files
        let qa_bytes = env.qa_jsonl();
        let corpus_bytes = env.corpus_jsonl();
        parse_qa("<memory qa>", &qa_bytes)?;
        parse_corpus("<memory corpus>", &corpus_bytes)?;
        env.qa_file_hash = sha256_hex(&qa_bytes);
        env.corpus_file_hash = sha256_hex(&corpus_bytes);
        Ok(env)
    }

    pub fn qa_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for q in &self.qa {
            let rec = QaRecordOut { id: &q.id, question: &q.question, answers: &q.references };
            serde_json::to_writer(&mut out, &rec).expect("qa record serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn corpus_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for d in &self.corpus {
            serde_json::to_writer(&mut out, d).expect("corpus record serializes");
            out.push(b'\n');
        }
        out
    }

    /// Writes both files and returns their paths.
    pub fn save(&self, dir: &Path) -> std::io::Result<(std::path::PathBuf, std::path::PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let qa = dir.join(format!("{}.qa.jsonl", self.name));
        let corpus = dir.join(format!("{}.corpus.jsonl", self.name));
        std::fs::write(&qa, self.qa_jsonl())?;
        std::fs::write(&corpus, self.corpus_jsonl())?;
        Ok((qa, corpus))
    }

    /// Re-reads the source files and checks them against the stored digests.
    pub fn verify_files(&self, qa_path: &Path, corpus_path: &Path) -> Result<(), LoadError> {
        for (path, expected) in [(qa_path, &self.qa_file_hash), (corpus_path, &self.corpus_file_hash)] {
            let found = sha256_hex(&read(path)?);
            if &found != expected {
                return Err(LoadError::DigestMismatch {
                    file: path.display().to_string(),
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(())
    }

    /// A proxy of `n` QA items. The corpus is kept whole; the QA digest is
    /// recomputed over the materialized subset.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Environment, LoadError> {
        self.subsample_with(n, seed, SubsampleMode::default())
    }

    pub fn subsample_with(&self, n: usize, seed: u64, mode: SubsampleMode) -> Result<Environment, LoadError> {
        if n == 0 || n > self.qa.len() {
            return Err(LoadError::SubsetSize { n, available: self.qa.len() });
        }
        let mut qa = self.qa.clone();
        if mode == SubsampleMode::ShuffleThenPrefix {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            qa.shuffle(&mut rng);
        }
        qa.truncate(n);
        let mut env = Environment { qa, ..self.clone() };
        env.qa_file_hash = sha256_hex(&env.qa_jsonl());
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qa_lines(n: usize) -> String {
        (0..n)
            .map(|i| format!("{{\"id\":\"q{i}\",\"question\":\"question {i}?\",\"answers\":[\"a{i}\"]}}\n"))
            .collect()
    }

    const CORPUS: &str = "{\"id\":\"d0\",\"text\":\"alpha beta\"}\n{\"id\":\"d1\",\"text\":\"gamma\",\"image_path\":\"img/1.png\"}\n";

    fn env(n: usize) -> Environment {
        Environment::from_bytes("t", "qa", qa_lines(n).as_bytes(), "corpus", CORPUS.as_bytes()).unwrap()
    }

    #[test]
    fn loads_hundred_rows_in_order() {
        let e = env(100);
        assert_eq!(e.qa.len(), 100);
        assert_eq!(e.qa[0].id, "q0");
        assert_eq!(e.qa[99].id, "q99");
        assert_eq!(e.corpus[1].image_path.as_deref(), Some("img/1.png"));
    }

    #[test]
    fn hashes_are_deterministic_and_sensitive() {
        let a = env(5);
        let b = env(5);
        assert_eq!(a.qa_file_hash, b.qa_file_hash);
        assert_eq!(a.corpus_file_hash, b.corpus_file_hash);
        let other_corpus = CORPUS.replace("alpha", "alphb");
        let c = Environment::from_bytes("t", "qa", qa_lines(5).as_bytes(), "c", other_corpus.as_bytes()).unwrap();
        assert_ne!(a.corpus_file_hash, c.corpus_file_hash);
    }

    #[test]
    fn missing_references_reports_line() {
        let mut text = qa_lines(3);
        text.push_str("{\"id\":\"bad\",\"question\":\"q?\"}\n");
        let err = Environment::from_bytes("t", "qa.jsonl", text.as_bytes(), "c", CORPUS.as_bytes()).unwrap_err();
        match err {
            LoadError::Record { file, line, message } => {
                assert_eq!(file, "qa.jsonl");
                assert_eq!(line, 4);
                assert!(message.contains("bad") && message.contains("answers"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let empty = "{\"id\":\"x\",\"question\":\"q?\",\"answers\":[]}\n";
        assert!(matches!(
            Environment::from_bytes("t", "qa", empty.as_bytes(), "c", CORPUS.as_bytes()),
            Err(LoadError::Record { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_corpus_id_rejected() {
        let dup = "{\"id\":\"d0\",\"text\":\"a\"}\n{\"id\":\"d0\",\"text\":\"b\"}\n";
        let err = Environment::from_bytes("t", "qa", qa_lines(1).as_bytes(), "c", dup.as_bytes()).unwrap_err();
        assert!(matches!(err, LoadError::Record { line: 2, .. }), "{err}");
    }

    #[test]
    fn serialize_then_load_is_identity() {
        let e = env(7);
        let back = Environment::from_bytes("t", "qa", &e.qa_jsonl(), "c", &e.corpus_jsonl()).unwrap();
        assert_eq!(back.qa, e.qa);
        assert_eq!(back.corpus, e.corpus);
    }

    #[test]
    fn files_on_disk_round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let e = env(4);
        let (qa, corpus) = e.save(dir.path()).unwrap();
        let loaded = load_environment(&qa, &corpus).unwrap();
        assert_eq!(loaded.name, "t");
        assert_eq!(loaded.qa, e.qa);
        loaded.verify_files(&qa, &corpus).unwrap();
        std::fs::write(&corpus, "{\"id\":\"z\",\"text\":\"changed\"}\n").unwrap();
        assert!(matches!(loaded.verify_files(&qa, &corpus), Err(LoadError::DigestMismatch { .. })));
    }

    #[test]
    fn subsample_full_size_is_permutation() {
        let e = env(30);
        let s = e.subsample(30, 42).unwrap();
        let mut a: Vec<_> = e.qa.iter().map(|q| q.id.clone()).collect();
        let mut b: Vec<_> = s.qa.iter().map(|q| q.id.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(s.corpus, e.corpus);
    }

    #[test]
    fn subsample_is_seeded_and_rehashed() {
        let e = env(50);
        let a = e.subsample(10, 42).unwrap();
        let b = e.subsample(10, 42).unwrap();
        assert_eq!(a.qa, b.qa);
        assert_eq!(a.qa_file_hash, b.qa_file_hash);
        assert_ne!(a.qa_file_hash, e.qa_file_hash);
        assert_eq!(a.qa_file_hash, sha256_hex(&a.qa_jsonl()));
        let stored = e.subsample_with(3, 42, SubsampleMode::StoredOrder).unwrap();
        assert_eq!(stored.qa, e.qa[..3].to_vec());
    }

    #[test]
    fn subsample_out_of_range() {
        let e = env(5);
        assert!(matches!(e.subsample(0, 1), Err(LoadError::SubsetSize { .. })));
        assert!(matches!(e.subsample(6, 1), Err(LoadError::SubsetSize { .. })));
    }

    #[test]
    fn smaller_subset_need_not_nest_in_larger() {
        // Independent shuffles per size: search for a seed where the size-20
        // subset is not contained in the size-200 subset of the same pool.
        let e = env(400);
        let found = (0..50u64).any(|seed| {
            let small = e.subsample(20, seed).unwrap();
            let large: HashSet<_> = e.subsample(200, seed + 1000).unwrap().qa.into_iter().map(|q| q.id).collect();
            small.qa.iter().any(|q| !large.contains(&q.id))
        });
        assert!(found);
        // Under one seed the prefixes nest.
        let small = e.subsample(20, 42).unwrap();
        let large: HashSet<_> = e.subsample(200, 42).unwrap().qa.into_iter().map(|q| q.id).collect();
        assert!(small.qa.iter().all(|q| large.contains(&q.id)));
    }

    #[test]
    fn subsample_is_sub_multiset() {
        let e = env(60);
        let all: HashSet<_> = e.qa.iter().map(|q| q.id.clone()).collect();
        for seed in 0..20 {
            for n in [1, 7, 60] {
                let s = e.subsample(n, seed).unwrap();
                let ids: HashSet<_> = s.qa.iter().map(|q| q.id.clone()).collect();
                assert_eq!(ids.len(), n);
                assert!(ids.is_subset(&all));
            }
        }
    }
}
