//! Similarity ranking of catalog records against a query profile.
//!
//! The default embedder is a feature-hashing bag of words, so ranking works
//! offline and is reproducible bit for bit. A remote embedding endpoint can be
//! swapped in through [`EmbeddingProvider`].

use std::io::{Read, Write};
use std::time::Duration;

use serde_json::{json, Value};

use crate::catalog::MediaRecord;
use crate::entity::EntityMap;
use crate::http::{join_url, JsonClient};
use crate::text::tokens;

pub const DEFAULT_DIM: usize = 256;

/// Header magic of a persisted index.
pub const INDEX_MAGIC: [u8; 4] = *b"CRFI";
pub const INDEX_VERSION: u16 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("no records to index")]
    EmptyCatalog,
    #[error("token hashes cancel out to a zero vector")]
    ZeroVector,
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("record {record_id}: {source}")]
    Record {
        record_id: String,
        #[source]
        source: Box<RetrievalError>,
    },
    #[error("embedding endpoint: {0}")]
    Endpoint(String),
    #[error("bad index file: {0}")]
    BadIndexFile(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for RetrievalError {
    fn from(e: std::io::Error) -> Self {
        RetrievalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    HashedLocal,
    ExternalEndpoint,
}

pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn kind(&self) -> ProviderKind;
    /// Unit-length embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, RetrievalError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(RetrievalError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Signed feature hashing: each token adds ±1 to bucket `hash mod d`, the sign
/// taken from bit 63 of its FNV-1a hash. The result is L2-normalized.
pub fn embed_hashed(text: &str, d: usize) -> Result<Vec<f64>, RetrievalError> {
    if d == 0 {
        return Err(RetrievalError::InvalidDimension);
    }
    let toks = tokens(text);
    if toks.is_empty() {
        return Err(RetrievalError::EmptyText);
    }
    let mut v = vec![0.0; d];
    for t in &toks {
        let h = fnv1a64(t.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % d as u64) as usize] += sign;
    }
    normalize(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::HashedLocal
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        embed_hashed(text, self.dim)
    }
}

/// OpenAI-compatible `POST {base_url}/v1/embeddings`, reading
/// `data[0].embedding`. The bearer token comes from `LLM_API_KEY`.
#[derive(Debug, Clone)]
pub struct EndpointEmbedder {
    url: String,
    model: String,
    dim: usize,
    client: JsonClient,
}

impl EndpointEmbedder {
    pub fn new(base_url: &str, model: impl Into<String>, dim: usize) -> Self {
        Self::with_client(base_url, model, dim, JsonClient::from_env(Duration::from_secs(60)))
    }

    pub fn with_client(base_url: &str, model: impl Into<String>, dim: usize, client: JsonClient) -> Self {
        Self {
            url: join_url(base_url, "v1/embeddings"),
            model: model.into(),
            dim,
            client,
        }
    }
}

impl EmbeddingProvider for EndpointEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::ExternalEndpoint
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let resp = self
            .client
            .post_json(&self.url, &json!({"model": self.model, "input": text}))
            .map_err(|e| RetrievalError::Endpoint(e.to_string()))?;
        let raw = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| RetrievalError::Endpoint("missing data[0].embedding".into()))?;
        let v: Vec<f64> = raw
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| RetrievalError::Endpoint("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if v.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        normalize(v)
    }
}

/// Text a record is embedded from: title, genres, themes, then plot.
pub fn document_text(r: &MediaRecord) -> String {
    let mut parts: Vec<&str> = vec![&r.title];
    parts.extend(r.genres.iter().map(String::as_str));
    parts.extend(r.themes.iter().map(String::as_str));
    if let Some(plot) = &r.plot {
        parts.push(plot);
    }
    parts.join(" ")
}

/// Query text: entity values in class order, then the free text.
pub fn query_text(entities: &EntityMap, free_text: &str) -> String {
    let mut parts: Vec<&str> = entities.values().flatten().map(String::as_str).collect();
    parts.push(free_text);
    parts.join(" ")
}

/// Unit vectors keyed by record id. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl CatalogIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Writes the binary form: magic, version u16, d u32, count u64, then per
    /// record a u32 byte length, the UTF-8 id and d f32 values, all little-endian.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), RetrievalError> {
        w.write_all(&INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in v {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads [`Self::save`] output. Vectors are renormalized after widening
    /// from f32, so the unit-norm invariant holds in f64.
    pub fn load<R: Read>(mut r: R) -> Result<Self, RetrievalError> {
        fn take<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N], RetrievalError> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|_| RetrievalError::BadIndexFile(format!("truncated {what}")))?;
            Ok(buf)
        }
        if take::<4>(&mut r, "magic")? != INDEX_MAGIC {
            return Err(RetrievalError::BadIndexFile("wrong magic".into()));
        }
        let version = u16::from_le_bytes(take(&mut r, "version")?);
        if version != INDEX_VERSION {
            return Err(RetrievalError::BadIndexFile(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(take(&mut r, "dimension")?) as usize;
        if dim == 0 {
            return Err(RetrievalError::InvalidDimension);
        }
        let count = u64::from_le_bytes(take(&mut r, "count")?);
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for _ in 0..count {
            let len = u32::from_le_bytes(take(&mut r, "id length")?) as usize;
            let mut id = Vec::new();
            (&mut r).take(len as u64).read_to_end(&mut id)?;
            if id.len() != len {
                return Err(RetrievalError::BadIndexFile("truncated id".into()));
            }
            let id = String::from_utf8(id).map_err(|_| RetrievalError::BadIndexFile("id is not UTF-8".into()))?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(f64::from(f32::from_le_bytes(take(&mut r, "vector")?)));
            }
            let v = normalize(v).map_err(|e| RetrievalError::Record {
                record_id: id.clone(),
                source: Box::new(e),
            })?;
            ids.push(id);
            vectors.push(v);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(RetrievalError::BadIndexFile("trailing bytes".into()));
        }
        Ok(Self { dim, ids, vectors })
    }
}

pub fn index_catalog(records: &[MediaRecord], provider: &dyn EmbeddingProvider) -> Result<CatalogIndex, RetrievalError> {
    if records.is_empty() {
        return Err(RetrievalError::EmptyCatalog);
    }
    let mut ids = Vec::with_capacity(records.len());
    let mut vectors = Vec::with_capacity(records.len());
    for r in records {
        let v = provider.embed(&document_text(r)).map_err(|e| RetrievalError::Record {
            record_id: r.record_id.clone(),
            source: Box::new(e),
        })?;
        if v.len() != provider.dim() {
            return Err(RetrievalError::DimensionMismatch {
                expected: provider.dim(),
                got: v.len(),
            });
        }
        ids.push(r.record_id.clone());
        vectors.push(v);
    }
    Ok(CatalogIndex {
        dim: provider.dim(),
        ids,
        vectors,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top `k` records by cosine score, highest first; equal scores are ordered by
/// record id.
pub fn rank(
    index: &CatalogIndex,
    provider: &dyn EmbeddingProvider,
    query_entities: &EntityMap,
    free_text: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let q = match provider.embed(&query_text(query_entities, free_text)) {
        Err(RetrievalError::EmptyText) => return Err(RetrievalError::EmptyQuery),
        other => other?,
    };
    if q.len() != index.dim {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim,
            got: q.len(),
        });
    }
    let mut scored: Vec<(String, f64)> = index
        .entries()
        .map(|(id, v)| (id.to_owned(), dot(&q, v).clamp(-1.0, 1.0)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
