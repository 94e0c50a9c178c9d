//! Builds gateways, tools, the index and agents from a [`PipelineConfig`].

use std::path::PathBuf;
use std::sync::{Arc, PoisonError, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AutoResponder, ClarificationChannel};
use crate::config::{
    Backend, DenseKind, EndpointConfig, MarketSource, PipelineConfig, SearchProviderConfig,
};
use crate::eval::{BenchmarkSetup, GatewayJudge};
use crate::gateway::http::{HttpEmbedder, HttpEndpoint, HttpGenerator, HttpScorer};
use crate::gateway::{Gateway, GatewayError, ModelRole};
use crate::index::{DenseMode, HybridIndex, IndexConfig, IndexError};
use crate::ingest::{
    chunk_document, load_corpus, ChunkingConfig, CorpusFormat, IngestError, SourceDocument,
};
use crate::retriever::{Retriever, SharedIndex};
use crate::tools::calculator::Calculator;
use crate::tools::filings::FilingsTool;
use crate::tools::market::{AlphaVantage, FixtureFx, FixtureMarket, FxRateTool, MarketDataTool};
use crate::tools::web::{FixtureSearch, HttpSearch, SearchProvider, WebSearchTool};
use crate::tools::{Tool, ToolError, ToolRegistry};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub chunks: usize,
    /// Chunks dropped because their document was replaced or removed.
    pub removed: usize,
}

fn endpoint(cfg: &EndpointConfig) -> HttpEndpoint {
    let mut e = HttpEndpoint::new(&cfg.base_url, &cfg.model);
    if let Some(var) = &cfg.api_key_env {
        e = e.api_key_env(var);
    }
    if let Some(t) = cfg.timeout_secs {
        e = e.timeout(Duration::from_secs(t));
    }
    if let Some(rps) = cfg.max_requests_per_second {
        e = e.max_requests_per_second(rps);
    }
    e
}

pub fn build_gateway(cfg: &PipelineConfig) -> Result<Gateway, PipelineError> {
    match cfg.models.backend {
        Backend::Mock => Ok(Gateway::mock()),
        Backend::Http => {
            let http = cfg
                .models
                .http
                .as_ref()
                .ok_or_else(|| PipelineError::Config("models.http is missing".into()))?;
            let mut gw = Gateway::new(
                Arc::new(HttpEmbedder::new(
                    endpoint(&http.embedding),
                    http.embedding_dim,
                )),
                Arc::new(HttpGenerator::new(endpoint(&http.generator))),
            );
            let roles = [
                (ModelRole::QueryGenerator, &http.query_generator),
                (ModelRole::DocumentGenerator, &http.document_generator),
                (ModelRole::Agent, &http.agent),
                (ModelRole::Judge, &http.judge),
            ];
            for (role, ep) in roles {
                if let Some(ep) = ep {
                    gw = gw.with_role(role, Arc::new(HttpGenerator::new(endpoint(ep))));
                }
            }
            for r in &http.rerankers {
                gw = gw.with_reranker(&r.name, Arc::new(HttpScorer::new(endpoint(&r.endpoint))));
            }
            if let Some(name) = &http.default_reranker {
                gw = gw.with_default_reranker(name);
            }
            Ok(gw)
        }
    }
}

/// External tools per config; empty when tools are disabled.
pub fn build_tools(cfg: &PipelineConfig) -> Result<ToolRegistry, PipelineError> {
    let t = &cfg.tools;
    let mut reg = ToolRegistry::new().record_latency(t.record_latency);
    if !t.enabled {
        return Ok(reg);
    }
    let providers: Vec<Arc<dyn SearchProvider>> = t
        .web_search
        .iter()
        .map(|p| -> Arc<dyn SearchProvider> {
            match p {
                SearchProviderConfig::Fixture => Arc::new(FixtureSearch::builtin()),
                SearchProviderConfig::Serp {
                    base_url,
                    api_key_env,
                    engine,
                } => {
                    let mut s = HttpSearch::new("serp", base_url, api_key_env);
                    if let Some(e) = engine {
                        s = s.engine(e);
                    }
                    Arc::new(s)
                }
            }
        })
        .collect();
    let (fx, market): (Arc<dyn Tool>, Arc<dyn Tool>) = match t.market {
        MarketSource::Fixture => (
            Arc::new(FxRateTool::new(Arc::new(FixtureFx::builtin()))),
            Arc::new(MarketDataTool::new(Arc::new(FixtureMarket::builtin()))),
        ),
        MarketSource::AlphaVantage => {
            let av = Arc::new(AlphaVantage::new(&t.alpha_vantage_key_env));
            (
                Arc::new(FxRateTool::new(av.clone())),
                Arc::new(MarketDataTool::new(av)),
            )
        }
    };
    let tools: [Arc<dyn Tool>; 5] = [
        Arc::new(Calculator),
        Arc::new(WebSearchTool::new(providers)),
        fx,
        market,
        Arc::new(FilingsTool::fixture()),
    ];
    for tool in tools {
        reg.register(tool)?;
    }
    Ok(reg)
}

pub fn index_config(cfg: &PipelineConfig, dim: usize) -> IndexConfig {
    IndexConfig {
        dense: match cfg.index.dense {
            DenseKind::Exact => DenseMode::Exact,
            DenseKind::Hnsw => DenseMode::Hnsw(cfg.index.hnsw),
        },
        ..IndexConfig::new(dim)
    }
}

pub fn chunking(cfg: &PipelineConfig) -> ChunkingConfig {
    ChunkingConfig {
        max_chunk_chars: cfg.corpus.max_chunk_chars,
        overlap_chars: cfg.corpus.overlap_chars,
    }
}

/// Chunks and embeds `docs`, then replaces each document's chunks in the
/// index. All embedding happens before the index is touched, so a gateway
/// failure leaves the index unchanged.
pub fn ingest_documents(
    index: &RwLock<HybridIndex>,
    docs: &[SourceDocument],
    chunking: &ChunkingConfig,
    gateway: &Gateway,
) -> Result<IngestSummary, PipelineError> {
    let mut prepared = Vec::with_capacity(docs.len());
    for doc in docs {
        let chunks = chunk_document(doc, chunking)?;
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = if texts.is_empty() {
            Vec::new()
        } else {
            gateway.embed(&texts)?
        };
        prepared.push((doc.doc_id.as_str(), chunks, vectors));
    }
    let mut idx = index.write().unwrap_or_else(PoisonError::into_inner);
    let mut summary = IngestSummary::default();
    for (doc_id, chunks, vectors) in prepared {
        summary.removed += idx.remove_document(doc_id);
        summary.chunks += idx.upsert_chunks(&chunks, &vectors)?;
        summary.documents += 1;
    }
    Ok(summary)
}

/// A configured pipeline: gateway, tools and a shared index.
#[derive(Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub gateway: Gateway,
    pub tools: ToolRegistry,
    pub index: SharedIndex,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("profile", &self.config.profile)
            .field("gateway", &self.gateway)
            .field("tools", &self.tools)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Builds the pipeline, loading the index snapshot when one exists.
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        config
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let gateway = build_gateway(&config)?;
        let tools = build_tools(&config)?;
        let index = match &config.index.snapshot {
            Some(p) if p.exists() => {
                let idx = HybridIndex::load(p)?;
                if idx.dim() != gateway.dim() {
                    return Err(PipelineError::Config(format!(
                        "snapshot {} has dimension {}, the embedder produces {}",
                        p.display(),
                        idx.dim(),
                        gateway.dim()
                    )));
                }
                idx
            }
            _ => HybridIndex::new(index_config(&config, gateway.dim())),
        };
        Ok(Self {
            config,
            gateway,
            tools,
            index: Arc::new(RwLock::new(index)),
        })
    }

    pub fn ingest(&self, docs: &[SourceDocument]) -> Result<IngestSummary, PipelineError> {
        ingest_documents(&self.index, docs, &chunking(&self.config), &self.gateway)
    }

    /// Loads and ingests every configured corpus path.
    pub fn ingest_corpus(&self) -> Result<IngestSummary, PipelineError> {
        let format: CorpusFormat = self
            .config
            .corpus
            .format
            .parse()
            .map_err(PipelineError::Config)?;
        let mut docs = Vec::new();
        for p in &self.config.corpus.paths {
            docs.extend(load_corpus(p, format)?);
        }
        self.ingest(&docs)
    }

    pub fn remove_document(&self, doc_id: &str) -> usize {
        self.index
            .write()
            .unwrap_or_else(PoisonError::into_inner)
            .remove_document(doc_id)
    }

    pub fn retriever(&self) -> Retriever {
        Retriever::new(self.index.clone(), self.gateway.clone())
    }

    pub fn agent(&self, clarifier: Arc<dyn ClarificationChannel>) -> Agent {
        Agent::new(self.retriever(), self.gateway.clone(), self.tools.clone())
            .with_retrieval(self.config.retrieval.clone())
            .with_clarifier(clarifier)
    }

    /// Agent whose clarification requests are answered automatically.
    pub fn batch_agent(&self) -> Agent {
        self.agent(Arc::new(AutoResponder::new(
            self.config.agent.auto_clarification.clone(),
        )))
    }

    pub fn benchmark_setup(&self) -> BenchmarkSetup {
        BenchmarkSetup {
            gateway: self.gateway.clone(),
            index: self.index.clone(),
            tools: self.tools.clone(),
            judge: Arc::new(GatewayJudge::new(self.gateway.clone())),
            budgets: self.config.agent.budgets,
            options: self.config.eval,
        }
    }

    /// Writes the index snapshot if one is configured.
    pub fn persist_snapshot(&self) -> Result<Option<PathBuf>, PipelineError> {
        let Some(path) = &self.config.index.snapshot else {
            return Ok(None);
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(IndexError::from)?;
        }
        self.index
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .persist(path)?;
        Ok(Some(path.clone()))
    }
}

/// Directory of the bundled fixtures (corpus, dataset, tool tables).
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn fixture_pipeline() -> Pipeline {
        let mut cfg = PipelineConfig::default();
        cfg.corpus.paths = vec![fixtures_dir().join("corpus")];
        let p = Pipeline::from_config(cfg).unwrap();
        p.ingest_corpus().unwrap();
        p
    }

    #[test]
    fn ingests_fixture_corpus() {
        let p = fixture_pipeline();
        let idx = p.index.read().unwrap();
        let docs: Vec<&str> = idx.documents().collect();
        assert_eq!(docs, ["awk_2014", "awk_2015", "msft_2023"]);
        assert!(idx.len() > 3);
    }

    #[test]
    fn reingest_replaces_document() {
        let p = fixture_pipeline();
        let before = p.index.read().unwrap().len();
        let doc = SourceDocument::from_text("awk_2015", "Replaced text.");
        let s = p.ingest(&[doc]).unwrap();
        assert!(s.removed > 1);
        assert_eq!(s.chunks, 1);
        assert_eq!(p.index.read().unwrap().len(), before - s.removed + 1);
        assert_eq!(p.remove_document("awk_2015"), 1);
        assert_eq!(p.remove_document("awk_2015"), 0);
    }

    #[test]
    fn registry_follows_config() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(build_tools(&cfg).unwrap().len(), 5);
        cfg.tools.enabled = false;
        assert!(build_tools(&cfg).unwrap().is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.corpus.paths = vec![fixtures_dir().join("corpus")];
        cfg.index.snapshot = Some(dir.path().join("snap/index.mhix"));
        let p = Pipeline::from_config(cfg.clone()).unwrap();
        p.ingest_corpus().unwrap();
        assert!(p.persist_snapshot().unwrap().is_some());
        let q = Pipeline::from_config(cfg).unwrap();
        assert_eq!(*q.index.read().unwrap(), *p.index.read().unwrap());
    }

    #[test]
    fn batch_agent_answers_from_fixture_corpus() {
        let p = fixture_pipeline();
        assert_eq!(p.config.profile, Profile::Fixture);
        let agent = p.batch_agent();
        let mut state = crate::agent::AgentState::new("t", p.config.agent.budgets);
        let ep = agent
            .answer_query(
                "What was Microsoft Cloud revenue in fiscal year 2023?",
                &mut state,
                &|_, _| {},
            )
            .unwrap();
        assert!(!ep.citations.is_empty(), "{}", ep.answer);
    }
}
