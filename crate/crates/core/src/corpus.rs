//! Corpus ingestion and deterministic mixture materialization.
//!
//! A [`MixtureSpec`] names corpora by label and asks for token fractions of a
//! total budget. [`mix`] samples documents per component without replacement
//! (seeded), stops each component at the first document that meets or
//! overshoots its sub-budget, then shuffles the union at document
//! granularity. The resulting [`MixtureManifest`] carries everything needed
//! to re-materialize the exact token stream.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{CounterRng, PRNG_ID};
use crate::tokenizer::{TokenId, Tokenizer, DOC_SEPARATOR};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus at {0} has no valid documents")]
    EmptyCorpus(PathBuf),
    #[error("unsupported corpus format: {0}")]
    UnsupportedFormat(String),
    #[error("mixture component label not found: {0}")]
    LabelNotFound(String),
    #[error("component {label} needs {needed} tokens but only {available} are available")]
    InsufficientTokens { label: String, needed: u64, available: u64 },
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),
    #[error("manifest references document {id} missing from corpus {label}")]
    Drift { label: String, id: String },
    #[error("tokenizer mismatch: corpus {label} was counted with {found}, expected {expected}")]
    TokenizerMismatch { label: String, found: String, expected: String },
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    PlainTextPerFile,
}

impl std::str::FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "plain-text-per-file" | "text" => Ok(Self::PlainTextPerFile),
            other => Err(CorpusError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source_label: String,
    pub token_count: u64,
}

/// Summary of an ingested corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHandle {
    pub label: String,
    pub path: PathBuf,
    pub format: CorpusFormat,
    pub doc_count: u64,
    pub total_tokens: u64,
    pub tokenizer_id: String,
    /// Records skipped during ingestion (bad JSON, missing text, invalid
    /// UTF-8, empty text, duplicate id).
    pub malformed_records: u64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub handle: CorpusHandle,
    documents: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Build an in-memory corpus from `(id, text)` pairs. Duplicate ids and
    /// empty texts are counted as malformed, like file ingestion.
    pub fn from_texts<I, S, T>(label: &str, texts: I, tokenizer: &dyn Tokenizer) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let raw: Vec<RawRecord> = texts
            .into_iter()
            .map(|(id, text)| RawRecord::Ok { id: id.into(), text: text.into() })
            .collect();
        Self::build(label, PathBuf::from(format!("mem:{label}")), CorpusFormat::Jsonl, raw, tokenizer)
    }

    fn build(
        label: &str,
        path: PathBuf,
        format: CorpusFormat,
        raw: Vec<RawRecord>,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Self, CorpusError> {
        let mut malformed = 0u64;
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(raw.len());
        for rec in raw {
            match rec {
                RawRecord::Ok { id, text } => {
                    if text.trim().is_empty() {
                        warn!("{label}: record {id} has empty text, skipped");
                        malformed += 1;
                    } else if !seen.insert(id.clone()) {
                        warn!("{label}: duplicate document id {id}, skipped");
                        malformed += 1;
                    } else {
                        kept.push((id, text));
                    }
                }
                RawRecord::Malformed { ordinal, reason } => {
                    warn!("{label}: record {ordinal} skipped: {reason}");
                    malformed += 1;
                }
            }
        }
        if kept.is_empty() {
            return Err(CorpusError::EmptyCorpus(path));
        }
        let documents: Vec<Document> = kept
            .into_par_iter()
            .map(|(id, text)| {
                let token_count = tokenizer.count(&text) as u64;
                Document { id, text, source_label: label.to_string(), token_count }
            })
            .collect();
        let index = documents.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        let handle = CorpusHandle {
            label: label.to_string(),
            path,
            format,
            doc_count: documents.len() as u64,
            total_tokens: documents.iter().map(|d| d.token_count).sum(),
            tokenizer_id: tokenizer.id().to_string(),
            malformed_records: malformed,
        };
        Ok(Self { handle, documents, index })
    }

    pub fn label(&self) -> &str {
        &self.handle.label
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.documents[i])
    }

    /// Drop a document, e.g. to simulate corpus drift after a manifest was written.
    pub fn remove(&mut self, id: &str) -> Option<Document> {
        let pos = self.index.remove(id)?;
        let doc = self.documents.remove(pos);
        self.index = self.documents.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        self.handle.doc_count -= 1;
        self.handle.total_tokens -= doc.token_count;
        Some(doc)
    }
}

enum RawRecord {
    Ok { id: String, text: String },
    Malformed { ordinal: usize, reason: String },
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    #[serde(default)]
    id: Option<serde_json::Value>,
}

/// Read a corpus from disk and count tokens for every document.
///
/// `jsonl`: one object per line with a required `"text"` and optional `"id"`
/// (string or number); missing ids become the zero-based line ordinal. Blank
/// lines are ignored. `plain-text-per-file`: `path` is a directory and every
/// regular file directly inside it is one document, id = file name.
pub fn ingest(path: &Path, format: CorpusFormat, label: &str, tokenizer: &dyn Tokenizer) -> Result<Corpus, CorpusError> {
    let raw = match format {
        CorpusFormat::Jsonl => read_jsonl(path)?,
        CorpusFormat::PlainTextPerFile => read_text_dir(path)?,
    };
    Corpus::build(label, path.to_path_buf(), format, raw, tokenizer)
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (ordinal, line) in bytes.split(|b| *b == b'\n').enumerate() {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let Ok(line) = std::str::from_utf8(line) else {
            out.push(RawRecord::Malformed { ordinal, reason: "invalid UTF-8".into() });
            continue;
        };
        match serde_json::from_str::<JsonlRecord>(line) {
            Ok(rec) => {
                let id = match rec.id {
                    Some(serde_json::Value::String(s)) => s,
                    Some(serde_json::Value::Number(n)) => n.to_string(),
                    _ => ordinal.to_string(),
                };
                out.push(RawRecord::Ok { id, text: rec.text });
            }
            Err(e) => out.push(RawRecord::Malformed { ordinal, reason: e.to_string() }),
        }
    }
    Ok(out)
}

fn read_text_dir(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut out = Vec::with_capacity(entries.len());
    for (ordinal, file) in entries.iter().enumerate() {
        let bytes = fs::read(file).map_err(io_err(file))?;
        let id = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match String::from_utf8(bytes) {
            Ok(text) => out.push(RawRecord::Ok { id, text }),
            Err(_) => out.push(RawRecord::Malformed { ordinal, reason: format!("{id}: invalid UTF-8") }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub label: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub seed: u64,
    pub token_budget: u64,
}

impl MixtureSpec {
    pub fn new<S: Into<String>>(components: impl IntoIterator<Item = (S, f64)>, seed: u64, token_budget: u64) -> Self {
        Self {
            components: components
                .into_iter()
                .map(|(label, fraction)| MixtureComponent { label: label.into(), fraction })
                .collect(),
            seed,
            token_budget,
        }
    }

    /// Two-way natural/synthetic mixture; zero-fraction components are omitted.
    pub fn binary(natural: &str, synthetic: &str, synthetic_fraction: f64, seed: u64, token_budget: u64) -> Self {
        let mut parts = Vec::new();
        if synthetic_fraction < 1.0 {
            parts.push((natural, 1.0 - synthetic_fraction));
        }
        if synthetic_fraction > 0.0 {
            parts.push((synthetic, synthetic_fraction));
        }
        Self::new(parts, seed, token_budget)
    }

    pub fn fraction_of(&self, label: &str) -> f64 {
        self.components.iter().filter(|c| c.label == label).map(|c| c.fraction).sum()
    }

    /// All violations, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.components.is_empty() {
            v.push("mixture has no components".to_string());
        }
        if self.token_budget == 0 {
            v.push("token_budget must be positive".to_string());
        }
        let mut labels = HashSet::new();
        for c in &self.components {
            if !(0.0..=1.0).contains(&c.fraction) || !c.fraction.is_finite() {
                v.push(format!("fraction for {} is outside [0,1]: {}", c.label, c.fraction));
            }
            if !labels.insert(c.label.as_str()) {
                v.push(format!("duplicate component label {}", c.label));
            }
        }
        let sum: f64 = self.components.iter().map(|c| c.fraction).sum();
        if !self.components.is_empty() && (sum - 1.0).abs() > 1e-9 {
            v.push(format!("fractions sum to {sum}, expected 1"));
        }
        v
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::InvalidSpec(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSelection {
    pub label: String,
    pub doc_ids: Vec<String>,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRef {
    pub label: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievedFraction {
    pub label: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub spec: MixtureSpec,
    pub tokenizer_id: String,
    pub prng_id: String,
    /// Per component, in sampling order.
    pub selected_doc_ids: Vec<ComponentSelection>,
    pub achieved_fractions: Vec<AchievedFraction>,
    /// Global document order of the materialized stream.
    pub order: Vec<DocRef>,
    pub total_tokens: u64,
    pub max_selected_doc_tokens: u64,
    /// Hex SHA-256 over the little-endian token ids of the stream, with a
    /// separator id after every document.
    pub output_digest: String,
}

impl MixtureManifest {
    /// Allowed |achieved - requested| per component.
    pub fn tolerance(&self) -> f64 {
        self.max_selected_doc_tokens as f64 / self.spec.token_budget as f64
    }

    pub fn achieved(&self, label: &str) -> Option<f64> {
        self.achieved_fractions.iter().find(|a| a.label == label).map(|a| a.fraction)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        Ok(serde_json::from_str(s)?)
    }
}

fn component_rng(seed: u64, label: &str) -> CounterRng {
    CounterRng::derive(seed, TokenId::of(label).0)
}

// Key 0 is never produced by TokenId::of, so the global shuffle stream cannot
// collide with a component stream.
fn order_rng(seed: u64) -> CounterRng {
    CounterRng::derive(seed, 0)
}

fn find<'a>(corpora: &[&'a Corpus], label: &str) -> Result<&'a Corpus, CorpusError> {
    corpora
        .iter()
        .copied()
        .find(|c| c.label() == label)
        .ok_or_else(|| CorpusError::LabelNotFound(label.to_string()))
}

/// Materialize a mixture manifest.
pub fn mix(spec: &MixtureSpec, corpora: &[&Corpus], tokenizer: &dyn Tokenizer) -> Result<MixtureManifest, CorpusError> {
    spec.validate()?;
    let mut selections = Vec::with_capacity(spec.components.len());
    let mut order = Vec::new();
    let mut max_doc = 0u64;
    for comp in &spec.components {
        let corpus = find(corpora, &comp.label)?;
        if corpus.handle.tokenizer_id != tokenizer.id() {
            return Err(CorpusError::TokenizerMismatch {
                label: comp.label.clone(),
                found: corpus.handle.tokenizer_id.clone(),
                expected: tokenizer.id().to_string(),
            });
        }
        let sub_budget = comp.fraction * spec.token_budget as f64;
        let needed = sub_budget.ceil() as u64;
        if corpus.handle.total_tokens < needed {
            return Err(CorpusError::InsufficientTokens {
                label: comp.label.clone(),
                needed,
                available: corpus.handle.total_tokens,
            });
        }
        let mut perm: Vec<usize> = (0..corpus.documents.len()).collect();
        component_rng(spec.seed, &comp.label).shuffle(&mut perm);
        let mut tokens = 0u64;
        let mut ids = Vec::new();
        for idx in perm {
            if (tokens as f64) >= sub_budget {
                break;
            }
            let doc = &corpus.documents[idx];
            tokens += doc.token_count;
            max_doc = max_doc.max(doc.token_count);
            ids.push(doc.id.clone());
            order.push(DocRef { label: comp.label.clone(), id: doc.id.clone() });
        }
        selections.push(ComponentSelection { label: comp.label.clone(), doc_ids: ids, tokens });
    }
    order_rng(spec.seed).shuffle(&mut order);

    let total_tokens: u64 = selections.iter().map(|s| s.tokens).sum();
    let achieved_fractions = selections
        .iter()
        .map(|s| AchievedFraction {
            label: s.label.clone(),
            fraction: if total_tokens == 0 { 0.0 } else { s.tokens as f64 / total_tokens as f64 },
        })
        .collect();

    let mut manifest = MixtureManifest {
        spec: spec.clone(),
        tokenizer_id: tokenizer.id().to_string(),
        prng_id: PRNG_ID.to_string(),
        selected_doc_ids: selections,
        achieved_fractions,
        order,
        total_tokens,
        max_selected_doc_tokens: max_doc,
        output_digest: String::new(),
    };
    manifest.output_digest = stream_digest(&manifest, corpora, tokenizer)?;
    Ok(manifest)
}

/// SHA-256 of the separated token stream, hex encoded.
pub fn stream_digest(manifest: &MixtureManifest, corpora: &[&Corpus], tokenizer: &dyn Tokenizer) -> Result<String, CorpusError> {
    let mut hasher = Sha256::new();
    for id in token_stream(manifest, corpora, tokenizer)?.with_separators() {
        hasher.update(id.to_le_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}

fn resolve<'a>(manifest: &MixtureManifest, corpora: &[&'a Corpus]) -> Result<Vec<&'a Document>, CorpusError> {
    manifest
        .order
        .iter()
        .map(|r| {
            find(corpora, &r.label)?
                .get(&r.id)
                .ok_or_else(|| CorpusError::Drift { label: r.label.clone(), id: r.id.clone() })
        })
        .collect()
}

/// Lazily yields token ids in manifest order. Every referenced document is
/// resolved up front so drift is reported before any token is produced.
pub fn token_stream<'a>(
    manifest: &MixtureManifest,
    corpora: &[&'a Corpus],
    tokenizer: &'a dyn Tokenizer,
) -> Result<TokenStream<'a>, CorpusError> {
    Ok(TokenStream {
        docs: resolve(manifest, corpora)?,
        tokenizer,
        separators: false,
        next_doc: 0,
        buf: Vec::new().into_iter(),
        pending_separator: false,
    })
}

/// Same order as [`token_stream`] but yields token strings (for statistics).
pub fn piece_stream<'a>(
    manifest: &MixtureManifest,
    corpora: &[&'a Corpus],
    tokenizer: &'a dyn Tokenizer,
) -> Result<impl Iterator<Item = String> + 'a, CorpusError> {
    let docs = resolve(manifest, corpora)?;
    Ok(docs.into_iter().flat_map(move |d| tokenizer.pieces(&d.text)))
}

pub struct TokenStream<'a> {
    docs: Vec<&'a Document>,
    tokenizer: &'a dyn Tokenizer,
    separators: bool,
    next_doc: usize,
    buf: std::vec::IntoIter<TokenId>,
    pending_separator: bool,
}

impl<'a> TokenStream<'a> {
    /// Emit [`DOC_SEPARATOR`] after every document.
    pub fn with_separators(mut self) -> Self {
        self.separators = true;
        self
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }
}

impl Iterator for TokenStream<'_> {
    type Item = TokenId;

    fn next(&mut self) -> Option<TokenId> {
        loop {
            if let Some(t) = self.buf.next() {
                return Some(t);
            }
            if self.pending_separator {
                self.pending_separator = false;
                return Some(DOC_SEPARATOR);
            }
            let doc = self.docs.get(self.next_doc)?;
            self.next_doc += 1;
            self.buf = self.tokenizer.ids(&doc.text).into_iter();
            self.pending_separator = self.separators;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WordPunctTokenizer;
    use std::io::Write;

    fn tk() -> WordPunctTokenizer {
        WordPunctTokenizer
    }

    #[test]
    fn ingest_counts_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"text\":\"a b\"}\n{\"text\":\"c\"}\n{\"text\":\"d e f\"}\n").unwrap();
        let c = ingest(&p, CorpusFormat::Jsonl, "CC", &tk()).unwrap();
        assert_eq!(c.handle.doc_count, 3);
        assert_eq!(c.handle.total_tokens, 6);
        assert_eq!(c.documents()[1].id, "1");
    }

    #[test]
    fn ingest_empty_file_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "").unwrap();
        assert!(matches!(ingest(&p, CorpusFormat::Jsonl, "CC", &tk()), Err(CorpusError::EmptyCorpus(_))));
    }

    #[test]
    fn ingest_counts_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut f = fs::File::create(&p).unwrap();
        for i in 0..10 {
            if i == 4 {
                writeln!(f, "{{\"text\": \"broken").unwrap();
            } else {
                writeln!(f, "{{\"id\":\"d{i}\",\"text\":\"doc number {i}\"}}").unwrap();
            }
        }
        drop(f);
        let c = ingest(&p, CorpusFormat::Jsonl, "CC", &tk()).unwrap();
        assert_eq!(c.handle.doc_count, 9);
        assert_eq!(c.handle.malformed_records, 1);
        assert_eq!(c.handle.total_tokens, 27);
    }

    #[test]
    fn ingest_invalid_utf8_is_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.jsonl");
        let mut bytes = b"{\"text\":\"ok\"}\n{\"text\":\"".to_vec();
        bytes.extend_from_slice(&[0xFF, 0xFE]);
        bytes.extend_from_slice(b"\"}\n");
        fs::write(&p, bytes).unwrap();
        let c = ingest(&p, CorpusFormat::Jsonl, "CC", &tk()).unwrap();
        assert_eq!(c.handle.doc_count, 1);
        assert_eq!(c.handle.malformed_records, 1);
    }

    #[test]
    fn ingest_text_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "two words").unwrap();
        fs::write(dir.path().join("a.txt"), "one.").unwrap();
        let c = ingest(dir.path(), CorpusFormat::PlainTextPerFile, "TX", &tk()).unwrap();
        assert_eq!(c.handle.doc_count, 2);
        assert_eq!(c.handle.total_tokens, 4);
        assert_eq!(c.documents()[0].id, "a.txt");
    }

    #[test]
    fn ingest_missing_path_is_io_error() {
        let r = ingest(Path::new("/nonexistent/x.jsonl"), CorpusFormat::Jsonl, "X", &tk());
        assert!(matches!(r, Err(CorpusError::Io { .. })));
    }

    fn fixture(label: &str, n: usize) -> Corpus {
        let docs = (0..n).map(|i| (format!("{label}{i}"), format!("{label} token {}", "w ".repeat(i % 7 + 1))));
        Corpus::from_texts(label, docs, &tk()).unwrap()
    }

    #[test]
    fn identity_mixture() {
        let cc = fixture("CC", 40);
        let m = mix(&MixtureSpec::new([("CC", 1.0)], 1, 100), &[&cc], &tk()).unwrap();
        assert_eq!(m.achieved("CC"), Some(1.0));
        assert!(m.total_tokens >= 100);
        assert!(m.order.iter().all(|r| r.label == "CC"));
    }

    #[test]
    fn spec_validation_lists_everything() {
        let s = MixtureSpec::new([("A", 0.7), ("A", 0.7)], 0, 0);
        let v = s.violations();
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn missing_label_and_insufficient_tokens() {
        let cc = fixture("CC", 5);
        let err = mix(&MixtureSpec::new([("HQ", 1.0)], 1, 10), &[&cc], &tk()).unwrap_err();
        assert!(matches!(err, CorpusError::LabelNotFound(_)));
        let err = mix(&MixtureSpec::new([("CC", 1.0)], 1, 10_000), &[&cc], &tk()).unwrap_err();
        assert!(matches!(err, CorpusError::InsufficientTokens { .. }));
    }

    #[test]
    fn token_stream_basic_and_drift() {
        let mut c = Corpus::from_texts("CC", [("x", "a b"), ("y", "c")], &tk()).unwrap();
        let m = mix(&MixtureSpec::new([("CC", 1.0)], 3, 3), &[&c], &tk()).unwrap();
        let s1: Vec<_> = token_stream(&m, &[&c], &tk()).unwrap().collect();
        let s2: Vec<_> = token_stream(&m, &[&c], &tk()).unwrap().collect();
        assert_eq!(s1.len(), 3);
        assert_eq!(s1, s2);
        let sep: Vec<_> = token_stream(&m, &[&c], &tk()).unwrap().with_separators().collect();
        assert_eq!(sep.iter().filter(|t| **t == DOC_SEPARATOR).count(), 2);
        c.remove("y");
        assert!(matches!(token_stream(&m, &[&c], &tk()), Err(CorpusError::Drift { .. })));
    }

    #[test]
    fn manifest_json_round_trip() {
        let cc = fixture("CC", 30);
        let hq = fixture("HQ", 30);
        let m = mix(&MixtureSpec::new([("HQ", 0.33), ("CC", 0.67)], 7, 120), &[&cc, &hq], &tk()).unwrap();
        let back = MixtureManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn larger_budget_extends_selection() {
        let cc = fixture("CC", 60);
        let small = mix(&MixtureSpec::new([("CC", 1.0)], 5, 50), &[&cc], &tk()).unwrap();
        let large = mix(&MixtureSpec::new([("CC", 1.0)], 5, 150), &[&cc], &tk()).unwrap();
        let s = &small.selected_doc_ids[0].doc_ids;
        assert_eq!(&large.selected_doc_ids[0].doc_ids[..s.len()], &s[..]);
    }
}
