//! Document embeddings: a remote embedding-service client, an offline
//! hashing stand-in, and order-stable batching over either.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{normalize_text, Document};
use crate::error::{Error, Result};
use crate::hashing::hash_bytes;
use crate::http::{JsonClient, RetryPolicy};

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("embedding has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity("embedding contains a non-finite value".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }
}

/// Deterministic stand-in embedding: signed feature hashing of character
/// 3-grams and word tokens of the normalized text, L2-normalized.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector> {
    if dim == 0 {
        return Err(Error::Argument("dim must be at least 1".into()));
    }
    let norm = normalize_text(text);
    let mut acc = vec![0.0f64; dim];
    let add = |acc: &mut [f64], feature: &[u8], salt: u64| {
        let h = hash_bytes(feature, seed ^ salt);
        let idx = (h % dim as u64) as usize;
        acc[idx] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    };

    let padded: Vec<char> = std::iter::once(' ')
        .chain(norm.chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut buf = String::new();
    for w in padded.windows(3) {
        buf.clear();
        buf.extend(w);
        add(&mut acc, buf.as_bytes(), 0x9e37_79b9_7f4a_7c15);
    }
    for word in norm.split(' ').filter(|w| !w.is_empty()) {
        add(&mut acc, word.as_bytes(), 0x5851_f42d_4c95_7f2d);
    }

    let mut n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        // Texts with no features at all still map somewhere definite.
        add(&mut acc, norm.as_bytes(), 0x2545_f491_4f6c_dd1d);
        n = 1.0;
    }
    EmbeddingVector::new(acc.into_iter().map(|v| v / n).collect())
}

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, in input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl EmbeddingProvider for MockEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| mock_embed(t, self.dim, self.seed).map(|v| v.0))
            .collect()
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, policy: RetryPolicy) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client: JsonClient::new(policy),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = json!({ "input": texts, "model": self.model });
        let (resp, _) = self.client.post(&self.endpoint, self.api_key.as_deref(), &body);
        let parsed: EmbeddingResponse = serde_json::from_value(resp?)?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for d in parsed.data {
            let slot = out.get_mut(d.index).ok_or_else(|| {
                Error::Integrity(format!("embedding index {} out of range", d.index))
            })?;
            *slot = Some(d.embedding);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Integrity(format!("no embedding returned for input {i}"))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedOptions {
    pub batch_size: usize,
    pub parallelism: usize,
    /// Texts are head-truncated to this many characters before embedding.
    pub max_chars: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            batch_size: 64,
            parallelism: 4,
            max_chars: 8000,
        }
    }
}

fn truncate_chars(s: &str, max_chars: usize) -> String {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

/// Embeds documents in sub-batches, up to `opts.parallelism` in flight.
/// Output is order-aligned with `docs`. A failing sub-batch is reported with
/// the ids of exactly the documents it contained.
pub fn embed_batch(
    docs: &[Document],
    provider: &dyn EmbeddingProvider,
    opts: &EmbedOptions,
) -> Result<Vec<EmbeddingVector>> {
    if docs.is_empty() {
        return Err(Error::Argument("no documents to embed".into()));
    }
    let batch_size = opts.batch_size.max(1);
    let chunks: Vec<&[Document]> = docs.chunks(batch_size).collect();
    let results: Mutex<Vec<Option<Result<Vec<Vec<f64>>>>>> =
        Mutex::new((0..chunks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.clamp(1, chunks.len());

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= chunks.len() {
                    break;
                }
                let texts: Vec<String> = chunks[i]
                    .iter()
                    .map(|d| truncate_chars(&d.text, opts.max_chars))
                    .collect();
                let r = provider.embed_texts(&texts).and_then(|vs| {
                    if vs.len() != texts.len() {
                        Err(Error::Integrity(format!(
                            "provider returned {} vectors for {} texts",
                            vs.len(),
                            texts.len()
                        )))
                    } else {
                        Ok(vs)
                    }
                });
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut out = Vec::with_capacity(docs.len());
    let mut dim: Option<usize> = None;
    for (i, r) in results.into_inner().unwrap().into_iter().enumerate() {
        let ids = || chunks[i].iter().map(|d| d.id.clone()).collect::<Vec<_>>();
        let vectors = match r.expect("every chunk is processed") {
            Ok(v) => v,
            Err(e) => {
                let (message, attempts) = match e {
                    Error::Backend { message, attempts, .. } => (message, attempts),
                    other => (other.to_string(), Vec::new()),
                };
                return Err(Error::Backend {
                    message: format!("embedding sub-batch {} failed: {message}", i + 1),
                    ids: ids(),
                    attempts,
                });
            }
        };
        for v in vectors {
            let v = EmbeddingVector::new(v)?;
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(Error::Integrity(format!(
                        "embedding dimension changed from {d} to {} in sub-batch {}",
                        v.dim(),
                        i + 1
                    )))
                }
                _ => {}
            }
            out.push(v);
        }
    }
    Ok(out)
}
