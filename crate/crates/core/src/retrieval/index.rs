use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Chunk;
use crate::corpus::NotebookMeta;
use crate::embedder::{clamp_unit, EmbedError, EmbedderSpec, EmbeddingVector};
use crate::scalar::{dot, Scalar};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
const FORMAT_NAME: &str = "nbrag-index";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, vector has {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("chunk id `{0}` already indexed")]
    DuplicateChunkId(String),
    #[error("chunk `{chunk_id}` belongs to notebook `{chunk_notebook}` but metadata is for `{meta_notebook}`")]
    MetadataMismatch {
        chunk_id: String,
        chunk_notebook: String,
        meta_notebook: String,
    },
    #[error("index dimension must be > 0")]
    ZeroDim,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file {file}: {message}")]
    Format { file: String, message: String },
}

/// Exact-scan cosine index over chunk embeddings.
///
/// Vectors live in one contiguous buffer; metadata is shared between the
/// chunks of a notebook.
#[derive(Debug, Clone)]
pub struct VectorIndex<T> {
    dim: usize,
    vectors: Vec<T>,
    chunks: Vec<Chunk>,
    metas: Vec<Arc<NotebookMeta>>,
    ids: HashMap<String, usize>,
}

/// A search hit: position in the index plus its cosine to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a, T> {
    pub entry: usize,
    pub chunk_id: &'a str,
    pub relevance: T,
    pub vector: &'a [T],
}

/// Relevance descending, then chunk id ascending.
pub(crate) fn by_score_then_id<T: Scalar>(a: (T, &str), b: (T, &str)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

impl<T: Scalar> VectorIndex<T> {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDim);
        }
        Ok(Self {
            dim,
            vectors: Vec::new(),
            chunks: Vec::new(),
            metas: Vec::new(),
            ids: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.ids.contains_key(chunk_id)
    }

    pub fn entry(&self, i: usize) -> (&Chunk, &NotebookMeta) {
        (&self.chunks[i], &self.metas[i])
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.iter()
    }

    pub fn notebook_count(&self) -> usize {
        let mut ids: Vec<&str> = self.metas.iter().map(|m| m.notebook_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn add(
        &mut self,
        chunk: Chunk,
        vector: EmbeddingVector<T>,
        meta: NotebookMeta,
    ) -> Result<(), IndexError> {
        self.add_shared(chunk, vector, Arc::new(meta))
    }

    /// Like [`add`](Self::add), sharing one metadata record across a notebook's chunks.
    pub fn add_shared(
        &mut self,
        chunk: Chunk,
        vector: EmbeddingVector<T>,
        meta: Arc<NotebookMeta>,
    ) -> Result<(), IndexError> {
        if vector.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        if self.ids.contains_key(&chunk.chunk_id) {
            return Err(IndexError::DuplicateChunkId(chunk.chunk_id));
        }
        if chunk.notebook_id != meta.notebook_id {
            return Err(IndexError::MetadataMismatch {
                chunk_id: chunk.chunk_id,
                chunk_notebook: chunk.notebook_id,
                meta_notebook: meta.notebook_id.clone(),
            });
        }
        self.ids.insert(chunk.chunk_id.clone(), self.chunks.len());
        self.vectors.extend_from_slice(vector.values());
        self.chunks.push(chunk);
        self.metas.push(meta);
        Ok(())
    }

    /// The `min(fetch_k, len)` entries most similar to `query`, best first.
    pub fn candidate_search(
        &self,
        query: &EmbeddingVector<T>,
        fetch_k: usize,
    ) -> Result<Vec<Candidate<'_, T>>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let q = query.values();
        let mut scored: Vec<(T, usize)> = self
            .vectors
            .chunks_exact(self.dim)
            .map(|v| clamp_unit(dot(v, q)))
            .zip(0..)
            .collect();
        let cmp = |a: &(T, usize), b: &(T, usize)| {
            by_score_then_id(
                (a.0, self.chunks[a.1].chunk_id.as_str()),
                (b.0, self.chunks[b.1].chunk_id.as_str()),
            )
        };
        let k = fetch_k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(relevance, entry)| Candidate {
                entry,
                chunk_id: &self.chunks[entry].chunk_id,
                relevance,
                vector: self.vector(entry),
            })
            .collect())
    }

    /// Writes `manifest.json` and `chunks.jsonl` into `dir` and returns the
    /// manifest as written (counts and format fields filled in).
    pub fn save(&self, dir: &Path, info: &IndexManifest) -> Result<IndexManifest, IndexError> {
        fs::create_dir_all(dir)?;
        let manifest = IndexManifest {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            scalar: T::NAME.into(),
            dim: self.dim,
            chunk_count: self.len(),
            notebook_count: self.notebook_count(),
            ..info.clone()
        };
        let mut w = BufWriter::new(File::create(dir.join(CHUNKS_FILE))?);
        for i in 0..self.len() {
            let record = ChunkRecordRef {
                chunk: &self.chunks[i],
                meta: &self.metas[i],
                embedding: self.vector(i),
            };
            serde_json::to_writer(&mut w, &record).map_err(|e| format_err(CHUNKS_FILE, e))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(MANIFEST_FILE, e))?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }

    /// Loads an index written by [`save`](Self::save). Embeddings are kept bit-for-bit.
    pub fn load(dir: &Path) -> Result<(Self, IndexManifest), IndexError> {
        let manifest: IndexManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
            .map_err(|e| format_err(MANIFEST_FILE, e))?;
        if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
            return Err(IndexError::Format {
                file: MANIFEST_FILE.into(),
                message: format!("unsupported format {} v{}", manifest.format, manifest.version),
            });
        }
        let mut index = Self::new(manifest.dim)?;
        let mut shared: HashMap<String, Arc<NotebookMeta>> = HashMap::new();
        let reader = BufReader::new(File::open(dir.join(CHUNKS_FILE))?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ChunkRecord<T> = serde_json::from_str(&line).map_err(|e| IndexError::Format {
                file: CHUNKS_FILE.into(),
                message: format!("line {}: {e}", n + 1),
            })?;
            let vector = EmbeddingVector::from_unit(rec.embedding).map_err(|e: EmbedError| {
                IndexError::Format {
                    file: CHUNKS_FILE.into(),
                    message: format!("line {}: {e}", n + 1),
                }
            })?;
            let meta = shared
                .entry(rec.meta.notebook_id.clone())
                .or_insert_with(|| Arc::new(rec.meta.clone()));
            let meta = if **meta == rec.meta {
                meta.clone()
            } else {
                Arc::new(rec.meta)
            };
            index.add_shared(rec.chunk, vector, meta)?;
        }
        if index.len() != manifest.chunk_count {
            return Err(IndexError::Format {
                file: CHUNKS_FILE.into(),
                message: format!(
                    "manifest declares {} chunks, found {}",
                    manifest.chunk_count,
                    index.len()
                ),
            });
        }
        Ok((index, manifest))
    }
}

fn format_err(file: &str, e: serde_json::Error) -> IndexError {
    IndexError::Format {
        file: file.into(),
        message: e.to_string(),
    }
}

#[derive(Serialize)]
struct ChunkRecordRef<'a, T> {
    chunk: &'a Chunk,
    meta: &'a NotebookMeta,
    embedding: &'a [T],
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct ChunkRecord<T> {
    chunk: Chunk,
    meta: NotebookMeta,
    embedding: Vec<T>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub dim: usize,
    pub embedder: EmbedderSpec,
    pub competition_id: String,
    pub competition_title: String,
    pub competition_description: String,
    pub notebook_count: usize,
    pub chunk_count: usize,
}

impl IndexManifest {
    /// Descriptive fields; counts and format fields are filled in on save.
    pub fn describe(
        embedder: EmbedderSpec,
        competition_id: &str,
        competition_title: &str,
        competition_description: &str,
    ) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            scalar: String::new(),
            dim: 0,
            embedder,
            competition_id: competition_id.into(),
            competition_title: competition_title.into(),
            competition_description: competition_description.into(),
            notebook_count: 0,
            chunk_count: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Cell, CellKind};
    use chrono::NaiveDate;

    pub(crate) fn meta(id: &str) -> NotebookMeta {
        NotebookMeta {
            notebook_id: id.into(),
            url: format!("https://example.org/{id}"),
            title: id.to_uppercase(),
            author_name: "a".into(),
            author_avatar_url: String::new(),
            vote_count: 1,
            view_count: 2,
            comment_count: 0,
            publish_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            competition_id: "c".into(),
        }
    }

    fn chunk(nb: &str, ord: usize) -> Chunk {
        Chunk {
            chunk_id: Chunk::make_id(nb, ord),
            notebook_id: nb.into(),
            chunk_ordinal: ord,
            markdown_cells: vec![],
            code_cells: vec![Cell { kind: CellKind::Code, source: "x".into(), ordinal: ord }],
            rendered_text: "```python\nx\n```\n".into(),
        }
    }

    fn unit(v: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn add_and_duplicate() {
        let mut idx = VectorIndex::new(3).unwrap();
        idx.add(chunk("a", 0), unit(&[1.0, 0.0, 0.0]), meta("a")).unwrap();
        assert_eq!(idx.len(), 1);
        let err = idx.add(chunk("a", 0), unit(&[0.0, 1.0, 0.0]), meta("a")).unwrap_err();
        assert!(matches!(err, IndexError::DuplicateChunkId(id) if id == "a#0"));
        let err = idx.add(chunk("a", 1), unit(&[1.0, 0.0]), meta("a")).unwrap_err();
        assert!(matches!(err, IndexError::DimMismatch { expected: 3, actual: 2 }));
        let err = idx.add(chunk("a", 2), unit(&[1.0, 0.0, 0.0]), meta("b")).unwrap_err();
        assert!(matches!(err, IndexError::MetadataMismatch { .. }));
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn orthogonal_query_hits_itself() {
        let mut idx = VectorIndex::new(3).unwrap();
        idx.add(chunk("a", 0), unit(&[1.0, 0.0, 0.0]), meta("a")).unwrap();
        idx.add(chunk("b", 0), unit(&[0.0, 1.0, 0.0]), meta("b")).unwrap();
        idx.add(chunk("c", 0), unit(&[0.0, 0.0, 1.0]), meta("c")).unwrap();
        let hits = idx.candidate_search(&unit(&[0.0, 1.0, 0.0]), 2).unwrap();
        assert_eq!(hits[0].chunk_id, "b#0");
        assert_eq!(hits[0].relevance, 1.0);
        // tie at 0.0 resolved by id
        assert_eq!(hits[1].chunk_id, "a#0");
        let all = idx.candidate_search(&unit(&[0.0, 1.0, 0.0]), 99).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = VectorIndex::<f64>::new(2).unwrap();
        assert!(idx.candidate_search(&unit(&[1.0, 0.0]), 5).unwrap().is_empty());
        assert!(matches!(
            idx.candidate_search(&unit(&[1.0, 0.0, 0.0]), 5),
            Err(IndexError::DimMismatch { .. })
        ));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(VectorIndex::<f32>::new(0), Err(IndexError::ZeroDim)));
    }

    #[test]
    fn load_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = VectorIndex::new(2).unwrap();
        idx.add(chunk("a", 0), unit(&[1.0, 1.0]), meta("a")).unwrap();
        let info = IndexManifest::describe(EmbedderSpec::local(2), "c", "t", "d");
        idx.save(dir.path(), &info).unwrap();
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).unwrap();
        fs::write(&manifest_path, text.replace("\"chunk_count\": 1", "\"chunk_count\": 2")).unwrap();
        assert!(matches!(
            VectorIndex::<f64>::load(dir.path()),
            Err(IndexError::Format { .. })
        ));
    }
}
