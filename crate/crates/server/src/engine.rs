//! The chat pipeline shared by the HTTP service and the `query` command.

use std::collections::BTreeMap;
use std::sync::Arc;

use nbrag_core::config::{CompetitionConfig, EngineConfig};
use nbrag_core::corpus::MetadataLoad;
use nbrag_core::embedder::EmbedError;
use nbrag_core::generation::{
    assemble_prompt, generate, AssembledPrompt, GenerationResult, LlmError, LlmProvider,
    PromptOptions, Turn,
};
use nbrag_core::retrieval::{retrieve, IndexError, IndexManifest, RetrievalError, SearchSettings};
use nbrag_core::pipeline::{build_index, ingest_competition, IngestReport, PipelineError};
use nbrag_core::{DynEmbedder, Index, Source};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Server behaviour for one chat turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// Retrieval on, sources returned to the client.
    #[default]
    Community,
    /// Retrieval on and used in the prompt, sources withheld from the client.
    RagHidden,
    /// No retrieval; the prompt context is empty.
    Plain,
}

impl ConditionMode {
    pub fn retrieves(self) -> bool {
        !matches!(self, ConditionMode::Plain)
    }

    pub fn shows_sources(self) -> bool {
        matches!(self, ConditionMode::Community)
    }
}

impl std::str::FromStr for ConditionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "community" => Ok(ConditionMode::Community),
            "rag_hidden" => Ok(ConditionMode::RagHidden),
            "plain" => Ok(ConditionMode::Plain),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown competition `{0}`")]
    UnknownCompetition(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("embedder: {0}")]
    Embedder(#[from] EmbedError),
    #[error("language model: {0}")]
    Llm(#[from] LlmError),
    #[error("index for `{competition}`: {source}")]
    Index {
        competition: String,
        source: IndexError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("index for `{competition}` has dim {index_dim}, embedder produces {embedder_dim}")]
    DimMismatch {
        competition: String,
        index_dim: usize,
        embedder_dim: usize,
    },
}

pub struct Competition {
    pub manifest: IndexManifest,
    pub index: Index,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompetitionInfo {
    pub competition_id: String,
    pub title: String,
    pub description: String,
    pub notebook_count: usize,
    pub chunk_count: usize,
}

/// Retrieval and prompt for a turn, computed before any token is generated.
#[derive(Debug, Clone)]
pub struct PreparedTurn {
    pub mode: ConditionMode,
    pub prompt: AssembledPrompt,
    /// Sources used in the prompt (empty in plain mode).
    pub retrieved: Vec<Source>,
}

impl PreparedTurn {
    /// Sources the client may see: all of them in community mode, none otherwise.
    pub fn visible_sources(&self) -> Option<&[Source]> {
        self.mode.shows_sources().then_some(self.retrieved.as_slice())
    }
}

pub struct Engine {
    competitions: BTreeMap<String, Arc<Competition>>,
    embedder: Box<DynEmbedder>,
    llm: Box<dyn LlmProvider>,
    prompt: PromptOptions,
    defaults: SearchSettings,
}

impl Engine {
    pub fn new(embedder: Box<DynEmbedder>, llm: Box<dyn LlmProvider>, prompt: PromptOptions) -> Self {
        Self {
            competitions: BTreeMap::new(),
            embedder,
            llm,
            prompt,
            defaults: SearchSettings::default(),
        }
    }

    /// Builds providers from `cfg` and loads every configured index that exists on disk.
    pub fn from_config(cfg: &EngineConfig) -> Result<Self, EngineError> {
        let mut engine = Self::new(cfg.embedder.build()?, cfg.llm.build()?, cfg.prompt.clone());
        engine.defaults = cfg.search.clone();
        for comp in &cfg.competitions {
            if !comp.index_dir.join(nbrag_core::retrieval::MANIFEST_FILE).exists() {
                log::warn!(
                    "no index for competition `{}` at {}; run `nbrag index` first",
                    comp.id,
                    comp.index_dir.display()
                );
                continue;
            }
            let (index, manifest) = Index::load(&comp.index_dir).map_err(|source| EngineError::Index {
                competition: comp.id.clone(),
                source,
            })?;
            engine.insert_competition(manifest, index)?;
        }
        Ok(engine)
    }

    pub fn insert_competition(&mut self, manifest: IndexManifest, index: Index) -> Result<(), EngineError> {
        if let Some(dim) = self.embedder.dim() {
            if !index.is_empty() && dim != index.dim() {
                return Err(EngineError::DimMismatch {
                    competition: manifest.competition_id.clone(),
                    index_dim: index.dim(),
                    embedder_dim: dim,
                });
            }
        }
        self.competitions
            .insert(manifest.competition_id.clone(), Arc::new(Competition { manifest, index }));
        Ok(())
    }

    pub fn default_settings(&self) -> &SearchSettings {
        &self.defaults
    }

    pub fn has_competition(&self, id: &str) -> bool {
        self.competitions.contains_key(id)
    }

    pub fn competition(&self, id: &str) -> Option<&Arc<Competition>> {
        self.competitions.get(id)
    }

    pub fn competitions(&self) -> Vec<CompetitionInfo> {
        self.competitions
            .values()
            .map(|c| CompetitionInfo {
                competition_id: c.manifest.competition_id.clone(),
                title: c.manifest.competition_title.clone(),
                description: c.manifest.competition_description.clone(),
                notebook_count: c.index.notebook_count(),
                chunk_count: c.index.len(),
            })
            .collect()
    }

    /// Retrieves sources for `message` (unless the mode is plain) and assembles the prompt.
    pub fn prepare(
        &self,
        competition_id: &str,
        history: &[Turn],
        message: &str,
        settings: &SearchSettings,
        mode: ConditionMode,
    ) -> Result<PreparedTurn, EngineError> {
        let comp = self
            .competitions
            .get(competition_id)
            .ok_or_else(|| EngineError::UnknownCompetition(competition_id.to_string()))?;
        settings.validate().map_err(RetrievalError::from)?;
        let retrieved = if mode.retrieves() {
            retrieve(&comp.index, self.embedder.as_ref(), message, settings)?
        } else {
            Vec::new()
        };
        let prompt = assemble_prompt(
            message,
            &retrieved,
            &comp.manifest.competition_title,
            &comp.manifest.competition_description,
            history,
            &self.prompt,
        );
        Ok(PreparedTurn {
            mode,
            prompt,
            retrieved,
        })
    }

    pub fn generate(&self, turn: &PreparedTurn, sink: &mut dyn FnMut(&str)) -> GenerationResult {
        generate(&turn.prompt, self.llm.as_ref(), sink)
    }
}

/// Chunks embedded per embedder call while indexing.
pub const INDEX_BATCH: usize = 64;

/// Ingests one competition, embeds its chunks and writes the index to the
/// competition's `index_dir`.
pub fn index_competition(
    cfg: &EngineConfig,
    comp: &CompetitionConfig,
    metadata: &MetadataLoad,
    embedder: &DynEmbedder,
) -> Result<(Index, IndexManifest, IngestReport), EngineError> {
    let ingested = ingest_competition(comp, metadata)?;
    let index = build_index(&ingested.corpus, ingested.chunks, embedder, INDEX_BATCH)?;
    let info = IndexManifest::describe(cfg.embedder.clone(), &comp.id, &comp.title, &comp.description);
    let manifest = index.save(&comp.index_dir, &info).map_err(|source| EngineError::Index {
        competition: comp.id.clone(),
        source,
    })?;
    Ok((index, manifest, ingested.report))
}
