use super::*;
use crate::config::PipelineConfig;
use crate::pipeline::{fixtures_dir, Pipeline};

fn pipeline() -> Pipeline {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.paths = vec![fixtures_dir().join("corpus")];
    let p = Pipeline::from_config(cfg).unwrap();
    p.ingest_corpus().unwrap();
    p
}

fn dataset() -> Vec<QARecord> {
    load_dataset(&fixtures_dir().join("dataset.jsonl")).unwrap()
}

fn default_variant() -> Variant {
    Variant::new("default", RetrievalConfig::default(), true)
}

#[test]
fn empty_dataset_gives_empty_report() {
    let p = pipeline();
    let r = run_benchmark(&[], &default_variant(), &p.benchmark_setup());
    assert!(r.records.is_empty());
    assert_eq!(r.summary, Summary::default());
    assert_eq!(r.to_jsonl(), "");
}

#[test]
fn fixture_run_is_byte_identical() {
    let data = dataset();
    assert_eq!(data.len(), 3);
    let first = run_benchmark(&data, &default_variant(), &pipeline().benchmark_setup());
    let second = run_benchmark(&data, &default_variant(), &pipeline().benchmark_setup());
    assert_eq!(first.to_jsonl(), second.to_jsonl());
    assert_eq!(first.to_markdown(), second.to_markdown());
    assert_eq!(first.summary.failures, 0);
    for r in &first.records {
        let m = r.metrics.as_ref().unwrap();
        for v in [
            m.faithfulness,
            m.precision,
            m.recall,
            m.f1,
            m.rouge1_f,
            m.rouge_l_f,
        ] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!((-1.0..=1.0).contains(&m.cosine));
    }
    let ids: Vec<&str> = first.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["awk-revenue", "awk-rsu-growth", "msft-cloud"]);
}

#[test]
fn ablation_grid_has_six_rows_that_all_run() {
    let grid = ablation_grid(&RetrievalConfig::default());
    assert_eq!(grid.len(), 6);
    assert_eq!(grid[0].retrieval.mode, RetrievalMode::HydeBaseline);
    assert_eq!(grid[1].retrieval.k2_sparse, 0);
    assert_eq!(grid[3].retrieval.reranker.as_deref(), Some("bge"));
    assert!(!grid[4].tools && !grid[5].tools);
    let reports = run_grid(&dataset(), &grid, &pipeline().benchmark_setup());
    for r in &reports {
        assert_eq!(r.summary.failures, 0, "{}", r.to_markdown());
    }
    let md = grid_markdown(&reports);
    assert_eq!(md.lines().count(), 2 + 6);
    assert!(md.starts_with("| variant | records | failures | cosine | recall |"));
}

#[test]
fn judge_failure_is_isolated() {
    struct Down;
    impl Judge for Down {
        fn claims(&self, _: &str) -> Result<Vec<String>, EvalError> {
            Err(EvalError::Judge("offline".into()))
        }
        fn support(&self, _: &[String], _: &str) -> Result<Vec<bool>, EvalError> {
            Err(EvalError::Judge("offline".into()))
        }
    }
    let mut setup = pipeline().benchmark_setup();
    setup.judge = Arc::new(Down);
    let r = run_benchmark(&dataset(), &default_variant(), &setup);
    assert_eq!(r.summary.failures, 3);
    assert_eq!(r.summary.means, MetricBundle::default());
    assert!(r
        .records
        .iter()
        .all(|x| !x.answer.is_empty() && x.error.is_some()));
    assert!(r.to_markdown().contains("## Failures"));
}

#[test]
fn context_recall_mode_changes_recall_only_source() {
    let mut setup = pipeline().benchmark_setup();
    setup.options.recall_mode = RecallMode::Context;
    let r = run_benchmark(&dataset(), &default_variant(), &setup);
    assert_eq!(r.summary.failures, 0);
}
