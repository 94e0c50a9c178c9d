//! Answer-quality metrics and the benchmark runner.

mod dataset;
mod judge;
pub mod metrics;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, PoisonError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    human_eval_rollup, load_dataset, parse_dataset, parse_judgments, HumanJudgment, HumanRollup,
    QARecord, Verdict,
};
pub use judge::{
    context_recall, cosine_score, extract_claims, factual_correctness, factual_with_context_recall,
    faithfulness, ClaimSet, ClaimSource, Faithfulness, GatewayJudge, Judge, RecallMode,
};
pub use metrics::{hallucination_rate, numeric_match, rouge, Fraction, Prf, Rouge};

use crate::agent::{Agent, AgentState, Budgets, Event};
use crate::gateway::{Gateway, Usage, UsageMeter};
use crate::retriever::{RetrievalConfig, RetrievalMode, Retriever, SharedIndex};
use crate::tools::{Outcome, ToolRegistry};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("judge: {0}")]
    Judge(String),
    #[error("embedding: {0}")]
    Embedding(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub faithfulness: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cosine: f64,
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
}

/// One pipeline configuration of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub retrieval: RetrievalConfig,
    /// External tools on; `ask_user` and `retrieve_documents` are always
    /// available.
    pub tools: bool,
}

impl Variant {
    pub fn new(name: impl Into<String>, retrieval: RetrievalConfig, tools: bool) -> Self {
        Self {
            name: name.into(),
            retrieval,
            tools,
        }
    }
}

/// HyDE / Multi-HyDE with and without BM25, with either reranker, with and
/// without tools.
pub fn ablation_grid(base: &RetrievalConfig) -> Vec<Variant> {
    let multi = |bm25: bool, reranker: &str| RetrievalConfig {
        mode: RetrievalMode::MultiHyde,
        k2_sparse: if bm25 { base.k2_sparse } else { 0 },
        rerank: true,
        reranker: Some(reranker.to_string()),
        ..base.clone()
    };
    let hyde = RetrievalConfig {
        mode: RetrievalMode::HydeBaseline,
        k2_sparse: 0,
        rerank: false,
        reranker: None,
        ..base.clone()
    };
    vec![
        Variant::new("1 hyde", hyde, true),
        Variant::new(
            "2 multi-hyde + cross-encoder",
            multi(false, "cross_encoder"),
            true,
        ),
        Variant::new(
            "3 multi-hyde + bm25 + cross-encoder",
            multi(true, "cross_encoder"),
            true,
        ),
        Variant::new("4 multi-hyde + bm25 + bge", multi(true, "bge"), true),
        Variant::new(
            "5 multi-hyde + bm25 + bge, no tools",
            multi(true, "bge"),
            false,
        ),
        Variant::new(
            "6 multi-hyde + bm25 + cross-encoder, no tools",
            multi(true, "cross_encoder"),
            false,
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub recall_mode: RecallMode,
    /// Relative tolerance for the numeric-match flag.
    pub numeric_tolerance: f64,
    pub concurrency: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            recall_mode: RecallMode::Claim,
            numeric_tolerance: 0.005,
            concurrency: 4,
        }
    }
}

/// Everything a benchmark run needs besides the dataset and variant.
#[derive(Clone)]
pub struct BenchmarkSetup {
    pub gateway: Gateway,
    pub index: SharedIndex,
    pub tools: ToolRegistry,
    pub judge: Arc<dyn Judge>,
    pub budgets: Budgets,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub id: String,
    pub question: String,
    pub reference: String,
    pub answer: String,
    pub confident: bool,
    pub citations: Vec<String>,
    pub iterations: usize,
    pub tool_calls: usize,
    pub metrics: Option<MetricBundle>,
    pub numeric_match: bool,
    /// Episode flags plus degenerate-metric markers.
    pub flags: Vec<String>,
    pub usage: Usage,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub evaluated: usize,
    pub failures: usize,
    /// Means over evaluated records; all zero when none were.
    pub means: MetricBundle,
    pub numeric_match_rate: f64,
    pub confident_rate: f64,
    pub usage: Usage,
}

impl Default for MetricBundle {
    fn default() -> Self {
        Self {
            faithfulness: 0.0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            cosine: 0.0,
            rouge1_f: 0.0,
            rouge_l_f: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub variant: Variant,
    pub records: Vec<RecordResult>,
    pub summary: Summary,
}

/// Texts the answer may draw on: retrieved chunks and successful tool
/// payloads of the episode.
fn episode_context(events: &[Event]) -> String {
    let mut parts = Vec::new();
    for e in events {
        match e {
            Event::RetrievedContext { context } => {
                parts.extend(context.chunks.iter().map(|c| c.chunk.text.clone()))
            }
            Event::ToolResult { result, .. } => {
                if let Outcome::Ok { payload } = &result.outcome {
                    parts.push(payload.to_string());
                }
            }
            Event::ClarificationAnswer { text, .. } => parts.push(text.clone()),
            _ => {}
        }
    }
    parts.join("\n")
}

fn score(
    answer: &str,
    record: &QARecord,
    context: &str,
    setup: &BenchmarkSetup,
    flags: &mut Vec<String>,
) -> Result<MetricBundle, EvalError> {
    let judge = setup.judge.as_ref();
    let faith = faithfulness(answer, context, judge)?;
    if faith.supported.is_degenerate() {
        flags.push("faithfulness_no_claims".into());
    }
    let prf = match setup.options.recall_mode {
        RecallMode::Claim => factual_correctness(answer, &record.answer, judge)?,
        RecallMode::Context => factual_with_context_recall(answer, &record.answer, context, judge)?,
    };
    if prf.degenerate {
        flags.push("factual_zero_denominator".into());
    }
    let r = rouge(answer, &record.answer);
    Ok(MetricBundle {
        faithfulness: faith.score,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        cosine: cosine_score(answer, &record.answer, &setup.gateway)?,
        rouge1_f: r.rouge1_f,
        rouge_l_f: r.rouge_l_f,
    })
}

fn run_record(record: &QARecord, variant: &Variant, setup: &BenchmarkSetup) -> RecordResult {
    let meter = Arc::new(UsageMeter::default());
    let gw = setup.gateway.metered(meter.clone());
    let tools = if variant.tools {
        setup.tools.clone()
    } else {
        ToolRegistry::new()
    };
    let agent = Agent::new(Retriever::new(setup.index.clone(), gw.clone()), gw, tools)
        .with_retrieval(variant.retrieval.clone());
    let mut state = AgentState::new(format!("eval-{}", record.id), setup.budgets);
    let mut result = RecordResult {
        id: record.id.clone(),
        question: record.question.clone(),
        reference: record.answer.clone(),
        answer: String::new(),
        confident: false,
        citations: Vec::new(),
        iterations: 0,
        tool_calls: 0,
        metrics: None,
        numeric_match: false,
        flags: Vec::new(),
        usage: Usage::default(),
        error: None,
    };
    let episode = match agent.answer_query(&record.question, &mut state, &|_, _| {}) {
        Ok(ep) => ep,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    result.usage = meter.snapshot();
    result.answer = episode.answer;
    result.confident = episode.confident;
    result.citations = episode.citations;
    result.iterations = episode.iterations;
    result.tool_calls = episode.tool_calls;
    result.flags = episode.flags;
    result.numeric_match = numeric_match(
        &result.answer,
        &record.answer,
        setup.options.numeric_tolerance,
    );
    let context = episode_context(state.episode());
    match score(&result.answer, record, &context, setup, &mut result.flags) {
        Ok(m) => result.metrics = Some(m),
        Err(e) => result.error = Some(e.to_string()),
    }
    result
}

fn summarize(records: &[RecordResult]) -> Summary {
    let evaluated: Vec<&MetricBundle> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let n = evaluated.len();
    let mean = |f: fn(&MetricBundle) -> f64| {
        if n == 0 {
            0.0
        } else {
            evaluated.iter().map(|m| f(m)).sum::<f64>() / n as f64
        }
    };
    let rate = |f: fn(&RecordResult) -> bool| {
        if records.is_empty() {
            0.0
        } else {
            records.iter().filter(|r| f(r)).count() as f64 / records.len() as f64
        }
    };
    let mut usage = Usage::default();
    for r in records {
        usage += r.usage;
    }
    Summary {
        records: records.len(),
        evaluated: n,
        failures: records.len() - n,
        means: MetricBundle {
            faithfulness: mean(|m| m.faithfulness),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            cosine: mean(|m| m.cosine),
            rouge1_f: mean(|m| m.rouge1_f),
            rouge_l_f: mean(|m| m.rouge_l_f),
        },
        numeric_match_rate: rate(|r| r.numeric_match),
        confident_rate: rate(|r| r.confident),
        usage,
    }
}

/// Runs every record through the agent and scores it. Records run
/// concurrently; results keep dataset order.
pub fn run_benchmark(dataset: &[QARecord], variant: &Variant, setup: &BenchmarkSetup) -> Report {
    let slots: Mutex<Vec<Option<RecordResult>>> = Mutex::new(vec![None; dataset.len()]);
    let next = AtomicUsize::new(0);
    let workers = setup.options.concurrency.clamp(1, dataset.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(record) = dataset.get(i) else { break };
                let r = run_record(record, variant, setup);
                slots.lock().unwrap_or_else(PoisonError::into_inner)[i] = Some(r);
            });
        }
    });
    let records: Vec<RecordResult> = slots
        .into_inner()
        .unwrap_or_else(PoisonError::into_inner)
        .into_iter()
        .zip(dataset)
        .map(|(r, rec)| {
            r.unwrap_or_else(|| RecordResult {
                id: rec.id.clone(),
                question: rec.question.clone(),
                reference: rec.answer.clone(),
                answer: String::new(),
                confident: false,
                citations: Vec::new(),
                iterations: 0,
                tool_calls: 0,
                metrics: None,
                numeric_match: false,
                flags: Vec::new(),
                usage: Usage::default(),
                error: Some("record worker panicked".into()),
            })
        })
        .collect();
    Report {
        variant: variant.clone(),
        summary: summarize(&records),
        records,
    }
}

pub fn run_grid(dataset: &[QARecord], grid: &[Variant], setup: &BenchmarkSetup) -> Vec<Report> {
    grid.iter()
        .map(|v| run_benchmark(dataset, v, setup))
        .collect()
}

const SUMMARY_HEADER: &str = "| variant | records | failures | cosine | recall | factual correctness | faithfulness | rouge-1 | rouge-L | numeric match | in tokens | out tokens | wall time (s) |";
const SUMMARY_RULE: &str = "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|";

fn summary_row(r: &Report) -> String {
    let s = &r.summary;
    let m = &s.means;
    format!(
        "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} | {:.3} |",
        r.variant.name,
        s.records,
        s.failures,
        m.cosine,
        m.recall,
        m.f1,
        m.faithfulness,
        m.rouge1_f,
        m.rouge_l_f,
        s.numeric_match_rate,
        s.usage.in_tokens,
        s.usage.out_tokens,
        s.usage.wall_time,
    )
}

impl Report {
    /// One JSON object per record, in dataset order.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record results serialize") + "\n")
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# {}\n\n{SUMMARY_HEADER}\n{SUMMARY_RULE}\n{}\n",
            self.variant.name,
            summary_row(self)
        );
        let failed: Vec<&RecordResult> =
            self.records.iter().filter(|r| r.error.is_some()).collect();
        if !failed.is_empty() {
            out.push_str("\n## Failures\n\n");
            for r in failed {
                out.push_str(&format!(
                    "- {}: {}\n",
                    r.id,
                    r.error.as_deref().unwrap_or_default()
                ));
            }
        }
        out
    }
}

/// One summary row per report.
pub fn grid_markdown(reports: &[Report]) -> String {
    let rows: Vec<String> = reports.iter().map(summary_row).collect();
    format!("{SUMMARY_HEADER}\n{SUMMARY_RULE}\n{}\n", rows.join("\n"))
}

#[cfg(test)]
mod tests;
