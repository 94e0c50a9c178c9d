//! Pipeline configuration, loaded from TOML.
//!
//! ```toml
//! profile = "fixture"
//!
//! [corpus]
//! paths = ["corpus"]
//! format = "markdown-dir"
//!
//! [retrieval]
//! n = 3
//! k_final = 8
//!
//! [models]
//! backend = "mock"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Budgets;
use crate::eval::EvalOptions;
use crate::index::HnswParams;
use crate::retriever::RetrievalConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Mock models and fixture tools only; no network access.
    #[default]
    Fixture,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub paths: Vec<PathBuf>,
    /// `jsonl` or `markdown-dir`.
    pub format: String,
    pub max_chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            paths: Vec::new(),
            format: "markdown-dir".into(),
            max_chunk_chars: 1600,
            overlap_chars: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseKind {
    Exact,
    #[default]
    Hnsw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexSettings {
    pub dense: DenseKind,
    pub hnsw: HnswParams,
    /// Snapshot file loaded at startup and written on shutdown.
    pub snapshot: Option<PathBuf>,
}

impl Default for IndexSettings {
    fn default() -> Self {
        Self {
            dense: DenseKind::Hnsw,
            hnsw: HnswParams::default(),
            snapshot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub budgets: Budgets,
    pub clarification_timeout_secs: u64,
    pub auto_clarification: String,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            budgets: Budgets::default(),
            clarification_timeout_secs: 300,
            auto_clarification: crate::agent::AUTO_CLARIFICATION.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_requests_per_second: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerConfig {
    pub name: String,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

/// HTTP model endpoints. Roles without an endpoint use `generator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpModels {
    pub embedding: EndpointConfig,
    pub embedding_dim: usize,
    pub generator: EndpointConfig,
    #[serde(default)]
    pub query_generator: Option<EndpointConfig>,
    #[serde(default)]
    pub document_generator: Option<EndpointConfig>,
    #[serde(default)]
    pub agent: Option<EndpointConfig>,
    #[serde(default)]
    pub judge: Option<EndpointConfig>,
    #[serde(default)]
    pub rerankers: Vec<RerankerConfig>,
    #[serde(default)]
    pub default_reranker: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsConfig {
    pub backend: Backend,
    pub http: Option<HttpModels>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchProviderConfig {
    Fixture,
    Serp {
        base_url: String,
        api_key_env: String,
        #[serde(default)]
        engine: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketSource {
    #[default]
    Fixture,
    AlphaVantage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolsConfig {
    pub enabled: bool,
    /// Tried in order; the first provider that answers wins.
    pub web_search: Vec<SearchProviderConfig>,
    pub market: MarketSource,
    pub alpha_vantage_key_env: String,
    pub record_latency: bool,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            web_search: vec![SearchProviderConfig::Fixture],
            market: MarketSource::Fixture,
            alpha_vantage_key_env: "ALPHAVANTAGE_API_KEY".into(),
            record_latency: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub corpus: CorpusConfig,
    pub index: IndexSettings,
    pub retrieval: RetrievalConfig,
    pub agent: AgentSettings,
    pub models: ModelsConfig,
    pub tools: ToolsConfig,
    pub eval: EvalOptions,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, Path::new("<inline>"))
    }

    /// Loads a TOML file. Relative corpus and snapshot paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in &mut self.corpus.paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(s) = &mut self.index.snapshot {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.retrieval
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.agent
            .budgets
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.corpus.max_chunk_chars <= self.corpus.overlap_chars {
            return invalid("corpus.max_chunk_chars must exceed corpus.overlap_chars".into());
        }
        if let Err(e) = self.corpus.format.parse::<crate::ingest::CorpusFormat>() {
            return invalid(e);
        }
        if !(0.0..1.0).contains(&self.eval.numeric_tolerance) {
            return invalid("eval.numeric_tolerance must be in [0, 1)".into());
        }
        if self.models.backend == Backend::Http && self.models.http.is_none() {
            return invalid("models.backend = \"http\" needs a [models.http] section".into());
        }
        if self.profile == Profile::Fixture {
            if self.models.backend == Backend::Http {
                return invalid("the fixture profile only allows the mock model backend".into());
            }
            if self
                .tools
                .web_search
                .iter()
                .any(|p| *p != SearchProviderConfig::Fixture)
                || self.tools.market != MarketSource::Fixture
            {
                return invalid("the fixture profile only allows fixture tool providers".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_the_default() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.retrieval.n, 3);
        assert_eq!(cfg.retrieval.k1_dense, 10);
        assert_eq!(cfg.retrieval.k2_sparse, 15);
        assert_eq!(cfg.retrieval.k_final, 8);
        assert_eq!(cfg.agent.budgets.max_iterations, 8);
        assert_eq!(cfg.agent.budgets.max_tool_calls, 16);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            [retrieval]
            n = 5
            mode = "hyde_baseline"
            [agent.budgets]
            max_iterations = 3
            [index]
            dense = "exact"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.retrieval.n, 5);
        assert_eq!(cfg.retrieval.k_final, 8);
        assert_eq!(cfg.agent.budgets.max_iterations, 3);
        assert_eq!(cfg.agent.budgets.max_tool_calls, 16);
        assert_eq!(cfg.index.dense, DenseKind::Exact);
    }

    #[test]
    fn fixture_profile_forbids_live_backends() {
        let http = r#"
            [models]
            backend = "http"
            [models.http]
            embedding_dim = 8
            embedding = { base_url = "http://localhost:1", model = "e" }
            generator = { base_url = "http://localhost:1", model = "g" }
        "#;
        assert!(PipelineConfig::from_toml(http).is_err());
        assert!(PipelineConfig::from_toml(&format!("profile = \"live\"\n{http}")).is_ok());
        let serp = r#"
            [tools]
            web_search = [{ kind = "serp", base_url = "http://x", api_key_env = "K" }]
        "#;
        assert!(PipelineConfig::from_toml(serp).is_err());
        assert!(
            PipelineConfig::from_toml("profile = \"live\"\n[models]\nbackend = \"http\"").is_err()
        );
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("[retrieval]\nk_final = 0").is_err());
        assert!(PipelineConfig::from_toml("[corpus]\nformat = \"pdf\"").is_err());
        assert!(PipelineConfig::from_toml("[agent.budgets]\nmax_tool_calls = 0").is_err());
        assert!(PipelineConfig::from_toml("unknown = [").is_err());
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mhrag.toml");
        std::fs::write(
            &path,
            "[corpus]\npaths = [\"docs\"]\n[index]\nsnapshot = \"index.mhix\"\n",
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.paths, [dir.path().join("docs")]);
        assert_eq!(cfg.index.snapshot, Some(dir.path().join("index.mhix")));
    }
}
