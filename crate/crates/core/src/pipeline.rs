//! Directory-level ingestion and index building used by the CLI and service.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::chunker::{chunk_notebook, Chunk};
use crate::config::{CompetitionConfig, MetadataConfig, MetadataFormat};
use crate::corpus::{
    build_corpus, load_metadata_csv, load_metadata_jsonl, parse_notebook, Corpus, CorpusReport,
    MetadataError, MetadataLoad,
};
use crate::embedder::{EmbedError, Embedder};
use crate::retrieval::{IndexError, VectorIndex};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("metadata: {0}")]
    Metadata(#[from] MetadataError),
    #[error("notebook manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("embedding: {0}")]
    Embed(#[from] EmbedError),
    #[error("index: {0}")]
    Index(#[from] IndexError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_metadata(cfg: &MetadataConfig) -> Result<MetadataLoad, PipelineError> {
    let file = File::open(&cfg.path).map_err(io_err(&cfg.path))?;
    let load = match cfg.resolved_format() {
        MetadataFormat::Csv => load_metadata_csv(file, &cfg.columns)?,
        MetadataFormat::Jsonl => load_metadata_jsonl(BufReader::new(file), &cfg.columns)?,
    };
    Ok(load)
}

fn read_notebook_manifest(path: &Path) -> Result<HashMap<String, String>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        match (rec.get(0), rec.get(1)) {
            (Some(file), Some(id)) => {
                out.insert(file.to_string(), id.to_string());
            }
            _ => {
                return Err(PipelineError::Manifest {
                    path: path.to_path_buf(),
                    message: "expected two columns: file,notebook_id".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Counts produced by [`ingest_competition`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub competition_id: String,
    pub notebook_files: usize,
    pub parsed: usize,
    /// Parse failures by class (`malformed`, `empty`, `unsupported_language`).
    pub parse_failures: BTreeMap<String, usize>,
    pub metadata_rows: usize,
    pub metadata_rows_skipped: usize,
    pub metadata_duplicate_ids: usize,
    pub corpus: CorpusReport,
    pub chunks: usize,
    pub chunk_markdown_cells: usize,
    pub chunk_code_cells: usize,
}

impl IngestReport {
    pub fn parse_failed(&self) -> usize {
        self.parse_failures.values().sum()
    }
}

pub struct Ingested {
    pub corpus: Corpus,
    pub chunks: Vec<Chunk>,
    pub report: IngestReport,
}

/// Parses every `*.ipynb` under the competition's notebook directory, joins
/// with the metadata rows of that competition, and chunks the result.
pub fn ingest_competition(
    comp: &CompetitionConfig,
    metadata: &MetadataLoad,
) -> Result<Ingested, PipelineError> {
    let overrides = match &comp.notebook_manifest {
        Some(p) => read_notebook_manifest(p)?,
        None => HashMap::new(),
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&comp.notebooks_dir)
        .map_err(io_err(&comp.notebooks_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("ipynb"))
        .collect();
    files.sort();

    let mut report = IngestReport {
        competition_id: comp.id.clone(),
        notebook_files: files.len(),
        metadata_rows: metadata.metas.len(),
        metadata_rows_skipped: metadata.skipped_rows,
        metadata_duplicate_ids: metadata.duplicate_ids.len(),
        ..Default::default()
    };
    let mut notebooks = Vec::new();
    for path in &files {
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
        let id = overrides.get(file_name).map(String::as_str).unwrap_or(stem);
        let raw = fs::read(path).map_err(io_err(path))?;
        match parse_notebook(&raw, id) {
            Ok(nb) => notebooks.push(nb),
            Err(e) => {
                log::info!("skipping {}: {e}", path.display());
                *report.parse_failures.entry(e.class().to_string()).or_default() += 1;
            }
        }
    }
    report.parsed = notebooks.len();

    let (corpus, corpus_report) = build_corpus(
        notebooks,
        metadata.metas.clone(),
        &comp.id,
        &comp.title,
        &comp.description,
    );
    report.corpus = corpus_report;
    let chunks: Vec<Chunk> = corpus.notebooks.iter().flat_map(chunk_notebook).collect();
    report.chunks = chunks.len();
    report.chunk_markdown_cells = chunks.iter().map(|c| c.markdown_cells.len()).sum();
    report.chunk_code_cells = chunks.iter().map(|c| c.code_cells.len()).sum();
    Ok(Ingested {
        corpus,
        chunks,
        report,
    })
}

/// Embeds chunks and adds them, joined with their notebook metadata, to a new index.
pub fn build_index<T: Scalar>(
    corpus: &Corpus,
    chunks: Vec<Chunk>,
    embedder: &dyn Embedder<T>,
    batch_size: usize,
) -> Result<VectorIndex<T>, PipelineError> {
    let metas: HashMap<&str, Arc<_>> = corpus
        .metadata
        .iter()
        .map(|(id, m)| (id.as_str(), Arc::new(m.clone())))
        .collect();
    let mut index: Option<VectorIndex<T>> = embedder.dim().map(VectorIndex::new).transpose()?;
    let mut pending = chunks.into_iter().peekable();
    while pending.peek().is_some() {
        let batch: Vec<Chunk> = pending.by_ref().take(batch_size.max(1)).collect();
        let texts: Vec<&str> = batch.iter().map(|c| c.rendered_text.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        for (chunk, vector) in batch.into_iter().zip(vectors) {
            let idx = match &mut index {
                Some(i) => i,
                None => index.insert(VectorIndex::new(vector.dim())?),
            };
            let meta = metas
                .get(chunk.notebook_id.as_str())
                .cloned()
                .expect("chunks come from admitted notebooks");
            idx.add_shared(chunk, vector, meta)?;
        }
    }
    match index {
        Some(i) => Ok(i),
        // Remote embedder without a configured dim and nothing to embed.
        None => Ok(VectorIndex::new(1)?),
    }
}
