use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use mhrag_core::agent::{AgentState, Event};
use mhrag_core::config::{PipelineConfig, Profile};
use mhrag_core::eval::{
    ablation_grid, grid_markdown, human_eval_rollup, load_dataset, parse_judgments, run_benchmark,
    run_grid, RecallMode, Report, Variant,
};
use mhrag_core::ingest::{load_corpus, CorpusFormat};
use mhrag_core::pipeline::Pipeline;
use mhrag_core::tools::Outcome;
use mhrag_service::session::SessionStore;
use mhrag_service::terminal::LineClarifier;
use mhrag_service::{run_query, serve, AppState, QueryRequest};

const DEFAULT_SNAPSHOT: &str = ".mhrag/index.mhix";

#[derive(Parser)]
#[command(
    name = "mhrag",
    version,
    about = "Agentic retrieval QA over document corpora"
)]
struct Cli {
    /// Pipeline configuration (TOML). Defaults to the fixture profile.
    #[arg(long, global = true, alias = "pipeline")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Index snapshot file; overrides `index.snapshot`.
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Fixture,
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Add documents to the index and write the snapshot.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// `jsonl` or `markdown-dir`; defaults to `corpus.format`.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Drop a document from the index and write the snapshot.
    Remove {
        doc_id: String,
        #[arg(long)]
        json: bool,
    },
    /// Answer one question; clarification requests are answered automatically.
    Query {
        question: String,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        no_tools: bool,
        #[arg(long)]
        k_final: Option<usize>,
    },
    /// Interactive terminal session.
    Chat,
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8088")]
        addr: String,
        /// Session event logs; defaults to `sessions/` next to the snapshot.
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
        /// Environment variable holding the bearer token.
        #[arg(long, default_value = "MHRAG_API_TOKEN")]
        token_env: String,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Benchmark one pipeline variant.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Extra corpus paths ingested before the run.
        #[arg(long)]
        corpus: Vec<PathBuf>,
        /// Directory for `report.jsonl` and `report.md`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "default")]
        name: String,
        #[arg(long, value_enum)]
        recall: Option<RecallArg>,
        #[arg(long)]
        no_tools: bool,
        #[arg(long)]
        json: bool,
    },
    /// Benchmark every variant of an ablation grid.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        corpus: Vec<PathBuf>,
        /// `default` or a JSON file holding a list of variants.
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy, reliability and hallucination rate from human judgments.
    Human {
        #[arg(long)]
        judgments: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RecallArg {
    Claim,
    Context,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = cli.profile {
        cfg.profile = match p {
            ProfileArg::Fixture => Profile::Fixture,
            ProfileArg::Live => Profile::Live,
        };
    }
    if let Some(i) = &cli.index {
        cfg.index.snapshot = Some(i.clone());
    }
    if cfg.index.snapshot.is_none() {
        cfg.index.snapshot = Some(PathBuf::from(DEFAULT_SNAPSHOT));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_report(dir: &Path, stem: &str, report: &Report) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(format!("{stem}.jsonl")), report.to_jsonl())?;
    std::fs::write(dir.join(format!("{stem}.md")), report.to_markdown())?;
    Ok(())
}

/// Ingests the configured corpus plus `extra` for a benchmark run.
fn eval_pipeline(cfg: PipelineConfig, extra: &[PathBuf]) -> anyhow::Result<Pipeline> {
    let mut cfg = cfg;
    cfg.corpus.paths.extend(extra.iter().cloned());
    let p = Pipeline::from_config(cfg)?;
    p.ingest_corpus()?;
    if p.index.read().map(|i| i.is_empty()).unwrap_or(true) {
        bail!("the index is empty; pass --corpus or set corpus.paths");
    }
    Ok(p)
}

fn chat(pipeline: &Pipeline) -> anyhow::Result<()> {
    let term = Arc::new(LineClarifier::new(
        BufReader::new(std::io::stdin()),
        std::io::stdout(),
    ));
    let agent = pipeline.agent(term.clone());
    let mut state = AgentState::new("chat", pipeline.config.agent.budgets);
    term.say("Ask a question; /quit to leave.");
    while let Some(line) = term.prompt("> ") {
        if line == "/quit" {
            break;
        }
        if line.is_empty() {
            continue;
        }
        let observer = |_: usize, e: &Event| {
            if let Event::ToolResult { result, .. } = e {
                let status = match &result.outcome {
                    Outcome::Ok { .. } => "ok".to_string(),
                    Outcome::Error { message } => format!("error: {message}"),
                };
                term.say(&format!("  [{}] {status}", result.tool_name));
            }
        };
        let ep = agent.answer_query(&line, &mut state, &observer)?;
        term.say(&ep.answer);
        if !ep.citations.is_empty() {
            term.say(&format!("  sources: {}", ep.citations.join(", ")));
        }
        if !ep.flags.is_empty() {
            term.say(&format!("  flags: {}", ep.flags.join(", ")));
        }
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest {
            paths,
            format,
            json,
        } => {
            let format: CorpusFormat = format
                .as_deref()
                .unwrap_or(&cfg.corpus.format)
                .parse()
                .map_err(anyhow::Error::msg)?;
            let p = Pipeline::from_config(cfg)?;
            let mut docs = Vec::new();
            for path in &paths {
                docs.extend(load_corpus(path, format)?);
            }
            let summary = p.ingest(&docs)?;
            p.persist_snapshot()?;
            if json {
                print_json(&summary)?;
            } else {
                println!(
                    "ingested {} documents, {} chunks ({} replaced)",
                    summary.documents, summary.chunks, summary.removed
                );
            }
        }
        Command::Remove { doc_id, json } => {
            let p = Pipeline::from_config(cfg)?;
            let removed = p.remove_document(&doc_id);
            p.persist_snapshot()?;
            if json {
                print_json(&serde_json::json!({"doc_id": doc_id, "removed": removed}))?;
            } else {
                println!("removed {removed} chunks of {doc_id}");
            }
        }
        Command::Query {
            question,
            json,
            no_tools,
            k_final,
        } => {
            let p = Pipeline::from_config(cfg)?;
            let req = QueryRequest {
                question,
                retrieval: k_final.map(|k| serde_json::json!({"k_final": k})),
                tools: Some(!no_tools),
                ..Default::default()
            };
            let r = run_query(&p, &req)?;
            if json {
                print_json(&r)?;
            } else {
                println!("{}", r.answer);
                if !r.citations.is_empty() {
                    println!("sources: {}", r.citations.join(", "));
                }
                if !r.flags.is_empty() {
                    println!("flags: {}", r.flags.join(", "));
                }
                println!("trace: {}", r.trace_id);
            }
        }
        Command::Chat => chat(&Pipeline::from_config(cfg)?)?,
        Command::Eval(EvalCommand::Run {
            dataset,
            corpus,
            out,
            name,
            recall,
            no_tools,
            json,
        }) => {
            let data = load_dataset(&dataset)?;
            let p = eval_pipeline(cfg, &corpus)?;
            let mut setup = p.benchmark_setup();
            if let Some(r) = recall {
                setup.options.recall_mode = match r {
                    RecallArg::Claim => RecallMode::Claim,
                    RecallArg::Context => RecallMode::Context,
                };
            }
            let variant = Variant::new(name, p.config.retrieval.clone(), !no_tools);
            if no_tools {
                setup.tools = Default::default();
            }
            let report = run_benchmark(&data, &variant, &setup);
            if let Some(dir) = &out {
                write_report(dir, "report", &report)?;
            }
            if json {
                print_json(&report.summary)?;
            } else {
                print!("{}", report.to_markdown());
            }
        }
        Command::Eval(EvalCommand::Ablate {
            dataset,
            corpus,
            grid,
            out,
        }) => {
            let data = load_dataset(&dataset)?;
            let p = eval_pipeline(cfg, &corpus)?;
            let variants: Vec<Variant> = if grid == "default" {
                ablation_grid(&p.config.retrieval)
            } else {
                let text = std::fs::read_to_string(&grid)
                    .with_context(|| format!("reading grid {grid}"))?;
                serde_json::from_str(&text).with_context(|| format!("parsing grid {grid}"))?
            };
            let reports = run_grid(&data, &variants, &p.benchmark_setup());
            let table = grid_markdown(&reports);
            if let Some(dir) = &out {
                for (i, r) in reports.iter().enumerate() {
                    write_report(dir, &format!("variant-{}", i + 1), r)?;
                }
                std::fs::write(dir.join("ablation.md"), &table)?;
            }
            print!("{table}");
        }
        Command::Eval(EvalCommand::Human { judgments }) => {
            let text = std::fs::read_to_string(&judgments)
                .with_context(|| format!("reading {}", judgments.display()))?;
            print_json(&human_eval_rollup(&parse_judgments(&text)?)?)?;
        }
        Command::Serve {
            addr,
            sessions_dir,
            token_env,
        } => {
            let sessions_dir = sessions_dir.unwrap_or_else(|| {
                cfg.index
                    .snapshot
                    .as_deref()
                    .and_then(Path::parent)
                    .unwrap_or(Path::new("."))
                    .join("sessions")
            });
            let agent = cfg.agent.clone();
            let p = Pipeline::from_config(cfg)?;
            if p.index.read().map(|i| i.is_empty()).unwrap_or(false)
                && !p.config.corpus.paths.is_empty()
            {
                p.ingest_corpus()?;
            }
            let sessions = SessionStore::open(
                &sessions_dir,
                agent.budgets,
                Duration::from_secs(agent.clarification_timeout_secs),
            )?;
            let state = AppState::new(p, sessions).with_token(std::env::var(&token_env).ok());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                println!("listening on http://{}", listener.local_addr()?);
                std::io::stdout().flush()?;
                serve(state, listener, shutdown_signal()).await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
