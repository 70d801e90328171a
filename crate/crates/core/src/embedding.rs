//! Text-embedding interface and the brute-force cosine index used for
//! preliminary candidate retrieval.
//!
//! Corpora at the intended scale (~10^3 documents) make an exact scan cheap,
//! so there is no approximate nearest-neighbor structure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Project, ProjectStore};

pub type EmbeddingVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding transport failed after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("index corruption: expected dimension {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero vector has undefined cosine similarity")]
    ZeroVector,
    #[error("non-finite component in embedding")]
    NonFinite,
    #[error("cannot embed an empty text")]
    EmptyText,
    #[error("index file not found: {0}")]
    NotFound(PathBuf),
    #[error("malformed index file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Batch text embedder. Implementations must return one vector per input
/// text, all of the same dimension.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
    fn id(&self) -> String;
}

/// The text an index embeds for each project: title, blank line, body.
pub fn embedding_text(project: &Project) -> String {
    format!("{}\n\n{}", project.title, project.body)
}

/// Deterministic mock embedder: hashes each text to a seed and draws a unit
/// vector from it. Identical text always maps to the identical vector.
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockEmbedder { dim }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(64)
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|text| {
                if text.is_empty() {
                    return Err(EmbedError::EmptyText);
                }
                let digest = Sha256::digest(text.as_bytes());
                let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    v[0] = 1.0;
                } else {
                    for x in &mut v {
                        *x /= norm;
                    }
                }
                Ok(v)
            })
            .collect()
    }

    fn id(&self) -> String {
        format!("mock(dim={})", self.dim)
    }
}

/// Cosine similarity of two equal-dimension, non-zero vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimMismatch { expected: u.len(), got: v.len() });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(dot / (nu * nv))
}

/// In-memory id-to-vector index, immutable after build. Persisted as a flat
/// JSON sidecar for portability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorIndex {
    pub dim: usize,
    pub embedder_id: String,
    pub vectors: BTreeMap<String, EmbeddingVector>,
}

impl VectorIndex {
    pub fn build(store: &ProjectStore, embedder: &dyn Embedder) -> Result<Self, EmbedError> {
        let texts: Vec<String> = store.projects().iter().map(embedding_text).collect();
        let embedded = embedder.embed(&texts)?;
        let mut vectors = BTreeMap::new();
        let mut dim = 0usize;
        for (project, vector) in store.projects().iter().zip(embedded) {
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite);
            }
            if dim == 0 {
                dim = vector.len();
            } else if vector.len() != dim {
                return Err(EmbedError::DimMismatch { expected: dim, got: vector.len() });
            }
            vectors.insert(project.id.clone(), vector);
        }
        Ok(VectorIndex { dim, embedder_id: embedder.id(), vectors })
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let json = serde_json::to_string(self).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => EmbedError::NotFound(path.to_path_buf()),
            _ => EmbedError::Io(e),
        })?;
        serde_json::from_str(&text).map_err(|e| EmbedError::Malformed(e.to_string()))
    }
}

/// One retrieved candidate with its preliminary similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub id: String,
    pub similarity: f64,
}

/// The preliminary-retrieval result: top-N candidates by cosine similarity,
/// descending, query excluded. `short` flags a corpus smaller than N.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub entries: Vec<CandidateEntry>,
    pub short: bool,
}

impl CandidateSet {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn similarity_map(&self) -> std::collections::HashMap<String, f64> {
        self.entries.iter().map(|e| (e.id.clone(), e.similarity)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Retrieves the top-N reference candidates for a query project. The query's
/// own id is always excluded (cross-detection setting). Uses the indexed
/// vector when the query is part of the store, otherwise embeds it fresh.
pub fn preliminary_retrieve(
    query: &Project,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    n: usize,
) -> Result<CandidateSet, EmbedError> {
    let owned;
    let query_vector: &EmbeddingVector = match index.get(&query.id) {
        Some(v) => v,
        None => {
            owned = embedder.embed(&[embedding_text(query)])?.remove(0);
            &owned
        }
    };
    let mut scored: Vec<CandidateEntry> = Vec::with_capacity(index.len());
    for (id, vector) in &index.vectors {
        if id == &query.id {
            continue;
        }
        scored.push(CandidateEntry { id: id.clone(), similarity: cosine(query_vector, vector)? });
    }
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id)));
    let short = scored.len() < n;
    scored.truncate(n);
    Ok(CandidateSet { query_id: query.id.clone(), entries: scored, short })
}
