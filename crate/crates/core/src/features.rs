//! Text featurization: tokenizer, TF-IDF vectorizer and embedding providers.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub min_token_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_token_len: 2,
        }
    }
}

impl Tokenizer {
    pub fn with_min_len(min_token_len: usize) -> Self {
        Self {
            min_token_len,
            ..Self::default()
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && t.chars().count() >= self.min_token_len)
            .map(|t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .collect()
    }
}

/// Contiguous n-grams for `n` in `lo..=hi`, joined with a single space.
pub fn ngrams(tokens: &[String], (lo, hi): (usize, usize)) -> Vec<String> {
    let mut out = Vec::new();
    for n in lo.max(1)..=hi {
        if n > tokens.len() {
            break;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, &v)| (i as u32, v))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, row: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| row[i as usize] * v)
            .sum()
    }

    fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for e in &mut self.entries {
                e.1 /= n;
            }
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfConfig {
    pub ngram_range: (usize, usize),
    pub min_df: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self {
            ngram_range: (1, 2),
            min_df: 1,
        }
    }
}

/// Fitted TF-IDF vocabulary with smoothed idf `ln((1+N)/(1+df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub config: TfidfConfig,
    pub tokenizer: Tokenizer,
}

pub fn fit_tfidf(docs: &[Document], tokenizer: &Tokenizer) -> Result<TfidfModel> {
    fit_tfidf_with(docs, tokenizer, TfidfConfig::default())
}

pub fn fit_tfidf_with(
    docs: &[Document],
    tokenizer: &Tokenizer,
    config: TfidfConfig,
) -> Result<TfidfModel> {
    if docs.is_empty() {
        return Err(Error::Precondition("fit_tfidf needs at least one doc".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let mut terms = ngrams(&tokenizer.tokenize(&doc.text), config.ngram_range);
        terms.sort_unstable();
        terms.dedup();
        for t in terms {
            *df.entry(t).or_default() += 1;
        }
    }
    df.retain(|_, count| *count >= config.min_df.max(1));
    if df.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let n = docs.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (term, count)) in df.into_iter().enumerate() {
        idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
        vocabulary.insert(term, i);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        config,
        tokenizer: *tokenizer,
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn transform_sparse(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for term in ngrams(&self.tokenizer.tokenize(text), self.config.ngram_range) {
            if let Some(&col) = self.vocabulary.get(&term) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        let mut v = SparseVec {
            dim: self.dim(),
            entries: counts
                .into_iter()
                .map(|(col, tf)| (col as u32, tf * self.idf[col]))
                .collect(),
        };
        v.normalize();
        v
    }

    pub fn transform(&self, doc: &Document) -> Vec<f64> {
        self.transform_sparse(&doc.text).to_dense()
    }

    /// Term weights keyed by term rather than column index.
    pub fn transform_terms(&self, text: &str) -> BTreeMap<String, f64> {
        let inverse: HashMap<usize, &String> =
            self.vocabulary.iter().map(|(t, &i)| (i, t)).collect();
        self.transform_sparse(text)
            .entries
            .into_iter()
            .map(|(i, v)| (inverse[&(i as usize)].clone(), v))
            .collect()
    }
}

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

fn fnv1a64(salt: u64, bytes: &[u8]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ salt.wrapping_mul(PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

const COORD_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const SIGN_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;

/// Signed feature hashing over tokens and token bigrams, before
/// normalization. Each term touches exactly one coordinate.
pub fn hashed_counts(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 0 {
        return v;
    }
    let tokens = Tokenizer::default().tokenize(text);
    for term in ngrams(&tokens, (1, 2)) {
        let idx = (fnv1a64(COORD_SALT, term.as_bytes()) % dim as u64) as usize;
        let sign = if fnv1a64(SIGN_SALT, term.as_bytes()) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        v[idx] += sign;
    }
    v
}

/// [`hashed_counts`], L2-normalized.
pub fn hashing_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = hashed_counts(text, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    /// OpenAI-compatible `/embeddings` URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
}

fn default_key_env() -> String {
    "LABELCRAFT_EMBED_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hashing { dim: usize },
    Remote(RemoteEmbeddingConfig),
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashing {
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    doc_id: String,
    provider_hash: String,
    vector: Vec<f64>,
}

/// Remote embedding client with a per-document cache, persisted as JSONL.
#[derive(Debug)]
pub struct RemoteEmbedder {
    config: RemoteEmbeddingConfig,
    provider_hash: String,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbeddingConfig) -> Result<Self> {
        let provider_hash = {
            let mut h = Sha256::new();
            h.update(config.endpoint.as_bytes());
            h.update([0]);
            h.update(config.model.as_bytes());
            hex::encode(&h.finalize()[..8])
        };
        let mut cache = HashMap::new();
        if let Some(path) = &config.cache_path {
            if path.exists() {
                let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                for line in BufReader::new(file).lines() {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CacheLine = serde_json::from_str(&line)?;
                    if entry.provider_hash == provider_hash {
                        cache.insert(entry.doc_id, entry.vector);
                    }
                }
            }
        }
        Ok(Self {
            config,
            provider_hash,
            cache: Mutex::new(cache),
        })
    }

    pub fn provider_hash(&self) -> &str {
        &self.provider_hash
    }

    fn request(&self, text: &str) -> Result<Vec<f64>> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.config.timeout_secs)))
            .build()
            .into();
        let mut req = agent.post(&self.config.endpoint);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "model": self.config.model, "input": [text] });
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::ProviderUnreachable(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::MalformedProviderReply(e.to_string()))?;
        let vector = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::MalformedProviderReply("missing data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| Error::MalformedProviderReply("non-numeric embedding".into()))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(vector)
    }

    pub fn embed(&self, doc: &Document) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.lock().unwrap().get(&doc.id) {
            return Ok(v.clone());
        }
        let mut v = self.request(&doc.text)?;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        if let Some(path) = &self.config.cache_path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(&CacheLine {
                doc_id: doc.id.clone(),
                provider_hash: self.provider_hash.clone(),
                vector: v.clone(),
            })?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        self.cache
            .lock()
            .unwrap()
            .insert(doc.id.clone(), v.clone());
        Ok(v)
    }
}

#[derive(Debug)]
pub enum EmbeddingProvider {
    Hashing { dim: usize },
    Remote(RemoteEmbedder),
}

impl EmbeddingProvider {
    pub fn from_config(config: &EmbeddingConfig) -> Result<Self> {
        Ok(match config {
            EmbeddingConfig::Hashing { dim } => EmbeddingProvider::Hashing { dim: *dim },
            EmbeddingConfig::Remote(rc) => EmbeddingProvider::Remote(RemoteEmbedder::new(rc.clone())?),
        })
    }

    pub fn hashing(dim: usize) -> Self {
        EmbeddingProvider::Hashing { dim }
    }

    pub fn embed(&self, doc: &Document) -> Result<Vec<f64>> {
        match self {
            EmbeddingProvider::Hashing { dim } => Ok(hashing_embedding(&doc.text, *dim)),
            EmbeddingProvider::Remote(r) => r.embed(doc),
        }
    }
}

/// Identifies how a featurizer was built; stored alongside classifier LFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    Tfidf { ngram_range: (usize, usize), min_df: usize },
    Embedding { provider: EmbeddingConfig },
}

enum Source {
    Tfidf(TfidfModel),
    Embedding(EmbeddingProvider),
}

/// A shared, memoizing featurizer. Results are keyed by document text, so a
/// cached vector is exactly what a fresh computation would return.
pub struct Featurizer {
    spec: FeatureSpec,
    source: Source,
    memo: RwLock<HashMap<String, Arc<SparseVec>>>,
}

impl std::fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Featurizer")
            .field("spec", &self.spec)
            .field("dim", &self.dim())
            .finish()
    }
}

impl Featurizer {
    pub fn tfidf(model: TfidfModel) -> Self {
        Self {
            spec: FeatureSpec::Tfidf {
                ngram_range: model.config.ngram_range,
                min_df: model.config.min_df,
            },
            source: Source::Tfidf(model),
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn embedding(config: &EmbeddingConfig) -> Result<Self> {
        Ok(Self {
            spec: FeatureSpec::Embedding {
                provider: config.clone(),
            },
            source: Source::Embedding(EmbeddingProvider::from_config(config)?),
            memo: RwLock::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn tfidf_model(&self) -> Option<&TfidfModel> {
        match &self.source {
            Source::Tfidf(m) => Some(m),
            Source::Embedding(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            Source::Tfidf(m) => m.dim(),
            Source::Embedding(EmbeddingProvider::Hashing { dim }) => *dim,
            Source::Embedding(EmbeddingProvider::Remote(_)) => 0,
        }
    }

    pub fn features(&self, doc: &Document) -> Result<Arc<SparseVec>> {
        if let Some(v) = self.memo.read().unwrap().get(&doc.text) {
            return Ok(v.clone());
        }
        let v = Arc::new(match &self.source {
            Source::Tfidf(m) => m.transform_sparse(&doc.text),
            Source::Embedding(p) => SparseVec::from_dense(&p.embed(doc)?),
        });
        self.memo
            .write()
            .unwrap()
            .insert(doc.text.clone(), v.clone());
        Ok(v)
    }
}
