//! HyDE and Multi-HyDE retrieval.
//!
//! Multi-HyDE fans the user question out into `n` related queries, writes
//! one hypothetical answer passage per query, searches the dense index with
//! each passage embedding, adds BM25 hits for the original question, merges
//! everything into one pool and reranks the pool against the original
//! question. The HyDE baseline averages `n` hypothetical embeddings of the
//! question itself into a single search vector.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, PoisonError, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    mean_vector, EmbeddingVector, Gateway, GatewayError, GenerationRequest, Message, ModelRole,
};
use crate::index::{HybridIndex, IndexError, ScoredCandidate, Source};
use crate::ingest::Chunk;
use crate::prompts;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    HydeBaseline,
    #[default]
    MultiHyde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub n: usize,
    pub k1_dense: usize,
    pub k2_sparse: usize,
    pub k_final: usize,
    pub mode: RetrievalMode,
    /// Skip reranking and keep the dense/sparse round-robin order.
    pub rerank: bool,
    /// Named reranker; `None` uses the gateway default.
    pub reranker: Option<String>,
    pub hypothetical_max_tokens: u32,
    pub hypothetical_temperature: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n: 3,
            k1_dense: 10,
            k2_sparse: 15,
            k_final: 8,
            mode: RetrievalMode::MultiHyde,
            rerank: true,
            reranker: None,
            hypothetical_max_tokens: 200,
            hypothetical_temperature: 0.7,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.n == 0 {
            return Err(RetrievalError::InvalidConfig("n must be at least 1".into()));
        }
        if self.k_final == 0 {
            return Err(RetrievalError::InvalidConfig(
                "k_final must be at least 1".into(),
            ));
        }
        let pool = self.n * self.k1_dense + self.k2_sparse;
        if self.k_final > pool {
            return Err(RetrievalError::InvalidConfig(format!(
                "k_final {} exceeds the candidate pool bound {pool}",
                self.k_final
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFanout {
    pub original: String,
    pub variants: Vec<String>,
    /// Aligned with `variants` in Multi-HyDE mode; in baseline mode the
    /// single variant is the question and this holds its `n` samples.
    pub hypotheticals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub chunk_id: String,
    /// Highest pre-rerank score over all occurrences.
    pub score: f64,
    pub sources: BTreeSet<Source>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextChunk {
    pub chunk: Chunk,
    /// Rerank score, or the pre-rerank score when reranking was skipped.
    pub score: f64,
    pub sources: BTreeSet<Source>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub mode: RetrievalMode,
    pub fanout_prompt: String,
    pub hypothetical_prompt: String,
    pub dense_counts: Vec<usize>,
    pub sparse_count: usize,
    /// Size of the concatenated pool before deduplication.
    pub pool_size: usize,
    pub dedup_count: usize,
    pub pool: Vec<String>,
    pub reranker: Option<String>,
    pub rerank_scores: Vec<(String, f64)>,
    pub rerank_fallback: bool,
    /// Fanout plus hypothetical generations attempted.
    pub generator_calls: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub chunks: Vec<ContextChunk>,
    pub fanout: QueryFanout,
    pub trace: RetrievalTrace,
}

impl ContextSet {
    pub fn chunk_ids(&self) -> Vec<&str> {
        self.chunks
            .iter()
            .map(|c| c.chunk.chunk_id.as_str())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// `[chunk_id] text` lines, one per chunk, newlines inside chunk text
    /// folded to spaces.
    pub fn render(&self) -> String {
        self.chunks
            .iter()
            .map(|c| {
                format!(
                    "[{}] {}",
                    c.chunk.chunk_id,
                    c.chunk
                        .text
                        .split_whitespace()
                        .collect::<Vec<_>>()
                        .join(" ")
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Strips list markers such as `1.`, `2)`, `-` and `*`.
fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    let rest = &line[digits..];
    let rest = if digits > 0 {
        rest.strip_prefix('.')
            .or_else(|| rest.strip_prefix(')'))
            .unwrap_or(line)
    } else {
        rest.strip_prefix("- ")
            .or_else(|| rest.strip_prefix("* "))
            .unwrap_or(line)
    };
    rest.trim()
}

/// `n` distinct queries with `q` first. Missing lines are padded with
/// `"{q} ({i})"` and noted in `warnings`.
pub fn generate_queries(
    gw: &Gateway,
    q: &str,
    n: usize,
    warnings: &mut Vec<String>,
) -> Result<Vec<String>, RetrievalError> {
    let q = q.trim();
    if q.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let mut out = vec![q.to_string()];
    if n <= 1 {
        return Ok(out);
    }
    let req = GenerationRequest::new(
        ModelRole::QueryGenerator,
        vec![
            Message::system(prompts::QUERY_FANOUT),
            Message::user(prompts::fanout_user(q, n)),
        ],
    )
    .temperature(0.7)
    .max_tokens(512);
    let text = match gw.generate(&req) {
        Ok(g) => g.text,
        Err(e) => {
            warnings.push(format!("query fanout failed: {e}"));
            String::new()
        }
    };
    let mut seen: BTreeSet<String> = BTreeSet::from([crate::text::normalize(q)]);
    for line in text.lines() {
        if out.len() == n {
            break;
        }
        let line = strip_marker(line);
        if !line.is_empty() && seen.insert(crate::text::normalize(line)) {
            out.push(line.to_string());
        }
    }
    if out.len() < n {
        warnings.push(format!(
            "query fanout returned {} of {n} variants; padded",
            out.len()
        ));
        let mut i = out.len() + 1;
        while out.len() < n {
            let pad = format!("{q} ({i})");
            if seen.insert(crate::text::normalize(&pad)) {
                out.push(pad);
            }
            i += 1;
        }
    }
    Ok(out)
}

/// One hypothetical answer passage for `q_i`; an empty generation falls back
/// to `q_i` itself.
pub fn generate_hypothetical(
    gw: &Gateway,
    q_i: &str,
    cfg: &RetrievalConfig,
    warnings: &mut Vec<String>,
) -> Result<String, RetrievalError> {
    if q_i.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let req = GenerationRequest::new(
        ModelRole::DocumentGenerator,
        vec![
            Message::system(prompts::HYPOTHETICAL),
            Message::user(prompts::hypothetical_user(q_i)),
        ],
    )
    .temperature(cfg.hypothetical_temperature)
    .max_tokens(cfg.hypothetical_max_tokens);
    let text = gw.generate(&req)?.text;
    if text.trim().is_empty() {
        warnings.push(format!(
            "empty hypothetical for `{q_i}`; using the query itself"
        ));
        return Ok(q_i.to_string());
    }
    Ok(text.trim().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydeEmbedding {
    /// The plain average of the hypothetical embeddings.
    pub mean: Vec<f64>,
    /// `mean` re-normalized for search (identical to it when `n == 1`).
    pub vector: EmbeddingVector,
    pub hypotheticals: Vec<String>,
}

/// Averages the embeddings of `n` hypothetical passages for `q`.
pub fn hyde_embed(
    gw: &Gateway,
    q: &str,
    n: usize,
    cfg: &RetrievalConfig,
    warnings: &mut Vec<String>,
) -> Result<HydeEmbedding, RetrievalError> {
    if n == 0 {
        return Err(RetrievalError::InvalidConfig("n must be at least 1".into()));
    }
    let mut hypotheticals = Vec::with_capacity(n);
    let mut fallbacks = 0;
    for _ in 0..n {
        let before = warnings.len();
        hypotheticals.push(generate_hypothetical(gw, q, cfg, warnings)?);
        fallbacks += usize::from(warnings.len() > before);
    }
    if fallbacks == n {
        warnings.push("all hypotheticals empty; searching with the query embedding".into());
    }
    let embeddings = gw.embed(&hypotheticals)?;
    let mean = mean_vector(&embeddings);
    let vector = if n == 1 {
        embeddings.into_iter().next().expect("one embedding")
    } else {
        match EmbeddingVector::normalize(mean.clone()) {
            Ok(v) => v,
            Err(_) => {
                warnings.push(
                    "hypothetical embeddings cancel out; searching with the query embedding".into(),
                );
                gw.embed_one(q)?
            }
        }
    };
    Ok(HydeEmbedding {
        mean,
        vector,
        hypotheticals,
    })
}

/// Concatenates arms in order and keeps the first position of each chunk
/// with its highest score.
pub fn dedup(arms: &[Vec<ScoredCandidate>]) -> Vec<PoolEntry> {
    let mut pos: BTreeMap<String, usize> = BTreeMap::new();
    let mut out: Vec<PoolEntry> = Vec::new();
    for c in arms.iter().flatten() {
        match pos.get(&c.chunk_id) {
            Some(&i) => {
                let e = &mut out[i];
                e.score = e.score.max(c.score);
                e.sources.insert(c.source);
            }
            None => {
                pos.insert(c.chunk_id.clone(), out.len());
                out.push(PoolEntry {
                    chunk_id: c.chunk_id.clone(),
                    score: c.score,
                    sources: BTreeSet::from([c.source]),
                });
            }
        }
    }
    out
}

/// Alternates dense and sparse candidates (dense first), skipping chunks
/// already placed. This is the pre-rerank order.
pub fn round_robin(
    pool: Vec<PoolEntry>,
    dense_order: &[String],
    sparse_order: &[String],
) -> Vec<PoolEntry> {
    let mut by_id: BTreeMap<String, PoolEntry> =
        pool.into_iter().map(|e| (e.chunk_id.clone(), e)).collect();
    let mut out = Vec::with_capacity(by_id.len());
    let (mut d, mut s) = (dense_order.iter(), sparse_order.iter());
    loop {
        let mut progressed = false;
        for it in [&mut d, &mut s] {
            for id in it.by_ref() {
                if let Some(e) = by_id.remove(id) {
                    out.push(e);
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    out.extend(by_id.into_values());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub entries: Vec<(PoolEntry, f64)>,
    pub scores: Vec<(String, f64)>,
    pub fallback: Option<String>,
}

/// Scores `candidates` against `q`, stable-sorts descending and keeps
/// `k_final`. On scorer failure the input order is kept and the error is
/// returned in `fallback`.
pub fn rerank(
    gw: &Gateway,
    index: &HybridIndex,
    q: &str,
    candidates: Vec<PoolEntry>,
    k_final: usize,
    reranker: Option<&str>,
) -> Reranked {
    if candidates.is_empty() {
        return Reranked {
            entries: Vec::new(),
            scores: Vec::new(),
            fallback: None,
        };
    }
    let texts: Vec<String> = candidates
        .iter()
        .map(|c| {
            index
                .chunk(&c.chunk_id)
                .map_or_else(String::new, |ch| ch.text.clone())
        })
        .collect();
    let name = reranker.unwrap_or(gw.default_reranker()).to_string();
    match gw.score_pairs_with(&name, q, &texts) {
        Ok(scores) => {
            let mut scored: Vec<(PoolEntry, f64)> = candidates.into_iter().zip(scores).collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));
            let all = scored
                .iter()
                .map(|(e, s)| (e.chunk_id.clone(), *s))
                .collect();
            scored.truncate(k_final);
            Reranked {
                entries: scored,
                scores: all,
                fallback: None,
            }
        }
        Err(e) => {
            let mut entries: Vec<(PoolEntry, f64)> = candidates
                .into_iter()
                .map(|c| {
                    let s = c.score;
                    (c, s)
                })
                .collect();
            entries.truncate(k_final);
            Reranked {
                entries,
                scores: Vec::new(),
                fallback: Some(e.to_string()),
            }
        }
    }
}

/// Per-variant warnings and the hypothetical with its dense hits.
type VariantOutcome = (
    Vec<String>,
    Result<(String, Vec<ScoredCandidate>), RetrievalError>,
);

/// Runs one retrieval episode for `q`.
pub fn retrieve(
    q: &str,
    cfg: &RetrievalConfig,
    index: &HybridIndex,
    gw: &Gateway,
) -> Result<ContextSet, RetrievalError> {
    cfg.validate()?;
    let q = q.trim();
    if q.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let mut trace = RetrievalTrace {
        mode: cfg.mode,
        fanout_prompt: prompts::QUERY_FANOUT_VERSION.to_string(),
        hypothetical_prompt: prompts::HYPOTHETICAL_VERSION.to_string(),
        ..RetrievalTrace::default()
    };
    let mut fanout = QueryFanout {
        original: q.to_string(),
        ..QueryFanout::default()
    };
    let mut dense_arms: Vec<Vec<ScoredCandidate>> = Vec::new();
    match cfg.mode {
        RetrievalMode::MultiHyde => {
            fanout.variants = generate_queries(gw, q, cfg.n, &mut trace.warnings)?;
            trace.generator_calls = usize::from(cfg.n > 1) + fanout.variants.len();
            let outcomes: Vec<VariantOutcome> = std::thread::scope(|scope| {
                let handles: Vec<_> = fanout
                    .variants
                    .iter()
                    .map(|variant| {
                        scope.spawn(move || {
                            let mut warnings = Vec::new();
                            let r = (|| {
                                let hyp = generate_hypothetical(gw, variant, cfg, &mut warnings)?;
                                let v = gw.embed_one(&hyp)?;
                                let hits = index.dense_search(&v, cfg.k1_dense)?;
                                Ok((hyp, hits))
                            })();
                            (warnings, r)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("variant worker panicked"))
                    .collect()
            });
            let mut last_err = None;
            let mut kept = Vec::new();
            for (variant, (warnings, r)) in fanout.variants.iter().zip(outcomes) {
                trace.warnings.extend(warnings);
                match r {
                    Ok((hyp, hits)) => {
                        kept.push(variant.clone());
                        fanout.hypotheticals.push(hyp);
                        trace.dense_counts.push(hits.len());
                        dense_arms.push(hits);
                    }
                    Err(e) => {
                        trace
                            .warnings
                            .push(format!("variant `{variant}` dropped: {e}"));
                        last_err = Some(e);
                    }
                }
            }
            if kept.is_empty() {
                return Err(last_err.expect("at least one variant"));
            }
            fanout.variants = kept;
        }
        RetrievalMode::HydeBaseline => {
            let h = hyde_embed(gw, q, cfg.n, cfg, &mut trace.warnings)?;
            trace.generator_calls = cfg.n;
            let hits = index.dense_search(&h.vector, cfg.k1_dense)?;
            fanout.variants = vec![q.to_string()];
            fanout.hypotheticals = h.hypotheticals;
            trace.dense_counts.push(hits.len());
            dense_arms.push(hits);
        }
    }
    let sparse = if cfg.k2_sparse > 0 {
        index.sparse_search(q, cfg.k2_sparse)
    } else {
        Vec::new()
    };
    trace.sparse_count = sparse.len();

    let dense_order: Vec<String> = dense_arms
        .iter()
        .flatten()
        .map(|c| c.chunk_id.clone())
        .collect();
    let sparse_order: Vec<String> = sparse.iter().map(|c| c.chunk_id.clone()).collect();
    let mut arms = dense_arms;
    arms.push(sparse);
    trace.pool_size = arms.iter().map(Vec::len).sum();
    let pool = round_robin(dedup(&arms), &dense_order, &sparse_order);
    trace.dedup_count = pool.len();
    trace.pool = pool.iter().map(|e| e.chunk_id.clone()).collect();

    let ranked: Vec<(PoolEntry, f64)> = if cfg.rerank {
        let name = cfg
            .reranker
            .clone()
            .unwrap_or_else(|| gw.default_reranker().to_string());
        let r = rerank(gw, index, q, pool, cfg.k_final, Some(&name));
        trace.reranker = Some(name);
        trace.rerank_scores = r.scores;
        if let Some(e) = r.fallback {
            trace.rerank_fallback = true;
            trace
                .warnings
                .push(format!("rerank failed, kept round-robin order: {e}"));
        }
        r.entries
    } else {
        pool.into_iter()
            .take(cfg.k_final)
            .map(|e| {
                let s = e.score;
                (e, s)
            })
            .collect()
    };

    let chunks = ranked
        .into_iter()
        .filter_map(|(e, score)| {
            index.chunk(&e.chunk_id).map(|chunk| ContextChunk {
                chunk: chunk.clone(),
                score,
                sources: e.sources,
            })
        })
        .collect();
    Ok(ContextSet {
        chunks,
        fanout,
        trace,
    })
}

/// Shared, lockable index handle. Readers lock per retrieval, so long agent
/// episodes do not block ingestion.
pub type SharedIndex = Arc<RwLock<HybridIndex>>;

#[derive(Debug, Clone)]
pub struct Retriever {
    index: SharedIndex,
    gateway: Gateway,
}

impl Retriever {
    pub fn new(index: SharedIndex, gateway: Gateway) -> Self {
        Self { index, gateway }
    }

    pub fn from_index(index: HybridIndex, gateway: Gateway) -> Self {
        Self::new(Arc::new(RwLock::new(index)), gateway)
    }

    pub fn index(&self) -> &SharedIndex {
        &self.index
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn retrieve(&self, q: &str, cfg: &RetrievalConfig) -> Result<ContextSet, RetrievalError> {
        let index = self.index.read().unwrap_or_else(PoisonError::into_inner);
        retrieve(q, cfg, &index, &self.gateway)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{FailingScorer, HashEmbedder, ScriptedGenerator, TemplateGenerator};
    use crate::index::IndexConfig;
    use crate::ingest::ChunkKind;
    use std::sync::Arc;

    fn chunk(id: &str, text: &str) -> Chunk {
        let (doc, seq) = id.split_once(':').unwrap();
        Chunk {
            chunk_id: id.to_string(),
            doc_id: doc.to_string(),
            kind: ChunkKind::Prose,
            text: text.to_string(),
            char_span: (0, text.len()),
            seq: seq.parse().unwrap(),
            oversize: false,
        }
    }

    fn index(gw: &Gateway, chunks: &[Chunk]) -> HybridIndex {
        let mut idx = HybridIndex::new(IndexConfig::exact(gw.dim()));
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        idx.upsert_chunks(chunks, &gw.embed(&texts).unwrap())
            .unwrap();
        idx
    }

    fn corpus() -> Vec<Chunk> {
        vec![
            chunk(
                "awk:0",
                "American Water revenue for fiscal year 2015 was 3,159 million",
            ),
            chunk(
                "awk:1",
                "American Water revenue for fiscal year 2014 was 3,011 million",
            ),
            chunk("awk:2", "The board of directors approved a dividend"),
            chunk("awk:3", "Fair value per share was 45.45 in 2014"),
            chunk("msft:0", "Microsoft cloud revenue grew in fiscal year 2023"),
        ]
    }

    fn scripted(lines: &[&str]) -> Gateway {
        let script = ScriptedGenerator::new(lines.iter().copied())
            .with_fallback(Arc::new(TemplateGenerator));
        Gateway::mock().with_role(ModelRole::QueryGenerator, Arc::new(script))
    }

    #[test]
    fn single_query_needs_no_model_call() {
        let gw = Gateway::mock();
        let mut w = Vec::new();
        assert_eq!(
            generate_queries(&gw, "What?", 1, &mut w).unwrap(),
            vec!["What?"]
        );
        assert_eq!(gw.meter().calls(), 0);
    }

    #[test]
    fn scripted_fanout_passes_through() {
        let gw = scripted(&["q\nsecond variant\n3. third variant"]);
        let mut w = Vec::new();
        assert_eq!(
            generate_queries(&gw, "q", 3, &mut w).unwrap(),
            vec!["q", "second variant", "third variant"]
        );
        assert!(w.is_empty());
    }

    #[test]
    fn short_fanout_is_padded_with_warning() {
        let gw = scripted(&["q\nonly one"]);
        let mut w = Vec::new();
        let v = generate_queries(&gw, "q", 4, &mut w).unwrap();
        assert_eq!(v, vec!["q", "only one", "q (3)", "q (4)"]);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn empty_hypothetical_falls_back_to_query() {
        let script = ScriptedGenerator::new(["   "]);
        let gw = Gateway::mock().with_role(ModelRole::DocumentGenerator, Arc::new(script));
        let mut w = Vec::new();
        let h =
            generate_hypothetical(&gw, "what is x", &RetrievalConfig::default(), &mut w).unwrap();
        assert_eq!(h, "what is x");
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn hyde_mean_matches_formula() {
        let script = ScriptedGenerator::new(["revenue grew 5%", "margin fell in 2014"]);
        let gw = Gateway::mock().with_role(ModelRole::DocumentGenerator, Arc::new(script));
        let mut w = Vec::new();
        let h = hyde_embed(&gw, "q", 2, &RetrievalConfig::default(), &mut w).unwrap();
        let e = HashEmbedder::new(64);
        let unit = |t: &str| {
            let raw = e.raw(t);
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            raw.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let (a, b) = (unit("revenue grew 5%"), unit("margin fell in 2014"));
        for i in 0..64 {
            assert!((h.mean[i] - (a[i] + b[i]) / 2.0).abs() < 1e-9);
        }
        assert!((crate::gateway::l2_norm(h.vector.values()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hyde_single_sample_is_the_embedding() {
        let script = ScriptedGenerator::new(["revenue grew"]);
        let gw = Gateway::mock().with_role(ModelRole::DocumentGenerator, Arc::new(script));
        let mut w = Vec::new();
        let h = hyde_embed(&gw, "q", 1, &RetrievalConfig::default(), &mut w).unwrap();
        assert_eq!(h.vector, gw.embed_one("revenue grew").unwrap());
        assert_eq!(h.vector.values(), h.mean.as_slice());
    }

    #[test]
    fn default_retrieval_respects_contract() {
        let gw = Gateway::mock();
        let idx = index(&gw, &corpus());
        let ctx = retrieve(
            "What was American Water revenue in 2014?",
            &RetrievalConfig::default(),
            &idx,
            &gw,
        )
        .unwrap();
        assert!(ctx.chunks.len() <= 8);
        let ids: BTreeSet<&str> = ctx.chunk_ids().into_iter().collect();
        assert_eq!(ids.len(), ctx.chunks.len());
        for id in &ids {
            assert!(ctx.trace.pool.iter().any(|p| p == id));
        }
        assert_eq!(ctx.fanout.variants.len(), 3);
        assert_eq!(ctx.trace.generator_calls, 1 + 3);
        let scores: Vec<f64> = ctx.chunks.iter().map(|c| c.score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn n1_modes_coincide() {
        let gw = Gateway::mock();
        let idx = index(&gw, &corpus());
        let cfg = RetrievalConfig {
            n: 1,
            k2_sparse: 0,
            ..RetrievalConfig::default()
        };
        let multi = retrieve("fair value per share", &cfg, &idx, &gw).unwrap();
        let base = retrieve(
            "fair value per share",
            &RetrievalConfig {
                mode: RetrievalMode::HydeBaseline,
                ..cfg
            },
            &idx,
            &gw,
        )
        .unwrap();
        assert_eq!(multi.chunks, base.chunks);
    }

    #[test]
    fn rare_token_reaches_pool_through_bm25() {
        let gw = Gateway::mock();
        let idx = index(&gw, &corpus());
        let ctx = retrieve("45.45", &RetrievalConfig::default(), &idx, &gw).unwrap();
        assert!(ctx.trace.pool.iter().any(|id| id == "awk:3"));
    }

    #[test]
    fn rerank_failure_keeps_round_robin_order() {
        let gw = Gateway::mock().with_reranker("broken", Arc::new(FailingScorer));
        let idx = index(&gw, &corpus());
        let cfg = RetrievalConfig {
            reranker: Some("broken".into()),
            ..RetrievalConfig::default()
        };
        let ctx = retrieve("American Water revenue", &cfg, &idx, &gw).unwrap();
        assert!(ctx.trace.rerank_fallback);
        let expected: Vec<&str> = ctx.trace.pool.iter().take(8).map(String::as_str).collect();
        assert_eq!(ctx.chunk_ids(), expected);
    }

    #[test]
    fn rerank_orders_by_overlap_and_keeps_small_sets() {
        let gw = Gateway::mock();
        let idx = index(&gw, &corpus());
        let pool = vec![
            PoolEntry {
                chunk_id: "awk:2".into(),
                score: 0.9,
                sources: BTreeSet::from([Source::Dense]),
            },
            PoolEntry {
                chunk_id: "awk:1".into(),
                score: 0.1,
                sources: BTreeSet::from([Source::Sparse]),
            },
        ];
        let r = rerank(&gw, &idx, "american water revenue 2014", pool, 8, None);
        let ids: Vec<&str> = r.entries.iter().map(|(e, _)| e.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["awk:1", "awk:2"]);
        assert!(rerank(&gw, &idx, "q", Vec::new(), 8, None)
            .entries
            .is_empty());
    }

    #[test]
    fn dedup_keeps_max_and_all_sources() {
        let arms = vec![
            vec![ScoredCandidate {
                chunk_id: "a".into(),
                score: 0.2,
                source: Source::Dense,
            }],
            vec![ScoredCandidate {
                chunk_id: "a".into(),
                score: 3.0,
                source: Source::Sparse,
            }],
        ];
        let pool = dedup(&arms);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].score, 3.0);
        assert_eq!(pool[0].sources.len(), 2);
    }

    #[test]
    fn round_robin_interleaves() {
        let mk = |id: &str| PoolEntry {
            chunk_id: id.into(),
            score: 0.0,
            sources: BTreeSet::new(),
        };
        let pool = vec![mk("d1"), mk("d2"), mk("s1"), mk("s2")];
        let order = round_robin(
            pool,
            &["d1".into(), "d2".into()],
            &["s1".into(), "d1".into(), "s2".into()],
        );
        let ids: Vec<&str> = order.iter().map(|e| e.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["d1", "s1", "d2", "s2"]);
    }

    #[test]
    fn config_bounds() {
        assert!(RetrievalConfig::default().validate().is_ok());
        let bad = RetrievalConfig {
            n: 0,
            ..RetrievalConfig::default()
        };
        assert!(bad.validate().is_err());
        let too_big = RetrievalConfig {
            k_final: 100,
            ..RetrievalConfig::default()
        };
        assert!(too_big.validate().is_err());
    }
}
