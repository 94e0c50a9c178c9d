use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::{json, Value};

use mhrag_core::agent::{
    is_traceable, parse_meta_plan, validate_ledger, Event, MetaPlan, SubQuery,
};
use mhrag_core::eval::metrics::{f1, factual_from_labels, faithfulness_from_labels};
use mhrag_core::eval::{hallucination_rate, rouge};
use mhrag_core::gateway::Gateway;
use mhrag_core::index::{Bm25Params, DenseIndex, DenseMode, IndexConfig, Source, SparseIndex};
use mhrag_core::ingest::{Chunk, ChunkKind};
use mhrag_core::retriever::{dedup, round_robin};
use mhrag_core::text::tokenize;
use mhrag_core::tools::{calculator, ToolCall, ToolResult};
use mhrag_core::{HybridIndex, ScoredCandidate};

fn labels() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 0..30)
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-e]{1,3}|[0-9]{1,4}", 1..12).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn faithfulness_is_a_fraction(s in labels()) {
        let v = faithfulness_from_labels(&s).value();
        prop_assert!((0.0..=1.0).contains(&v));
        let mut more = s.clone();
        more.push(true);
        prop_assert!(faithfulness_from_labels(&more).value() >= v);
        let mut less = s;
        less.push(false);
        prop_assert!(faithfulness_from_labels(&less).value() <= v);
    }

    #[test]
    fn f1_sits_between_precision_and_recall(ar in labels(), ra in labels()) {
        let prf = factual_from_labels(&ar, &ra);
        for v in [prf.precision, prf.recall, prf.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if prf.precision > 0.0 && prf.recall > 0.0 {
            prop_assert!(prf.f1 >= prf.precision.min(prf.recall) - 1e-12);
            prop_assert!(prf.f1 <= prf.precision.max(prf.recall) + 1e-12);
        } else {
            prop_assert_eq!(prf.f1, 0.0);
        }
        prop_assert_eq!(prf.tp + prf.fp, ar.len());
    }

    #[test]
    fn f1_is_symmetric(p in 0.0..=1.0f64, r in 0.0..=1.0f64) {
        prop_assert!((f1(p, r) - f1(r, p)).abs() < 1e-15);
    }

    #[test]
    fn hallucination_rate_falls_as_reliability_rises(a in 0.0..=1.0f64, r1 in 0.01..=1.0f64, r2 in 0.01..=1.0f64) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let h_lo = hallucination_rate(a, lo).unwrap();
        let h_hi = hallucination_rate(a, hi).unwrap();
        prop_assert!(h_hi >= -1e-12);
        prop_assert!(h_lo >= h_hi - 1e-12);
    }

    #[test]
    fn rouge_is_bounded_and_reflexive(a in words(), b in words()) {
        let r = rouge(&a, &b);
        prop_assert!((0.0..=1.0).contains(&r.rouge1_f));
        prop_assert!((0.0..=1.0).contains(&r.rouge_l_f));
        prop_assert!(r.rouge_l_f <= r.rouge1_f + 1e-12);
        let same = rouge(&a, &a);
        prop_assert!((same.rouge1_f - 1.0).abs() < 1e-12);
        prop_assert!((same.rouge_l_f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokenize_is_idempotent(text in "\\PC{0,60}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
        for t in &once {
            prop_assert!(!t.is_empty());
            prop_assert_eq!(t.to_lowercase(), t.clone());
        }
    }
}

fn text_field() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 {}\\[\\]\":,.%$-]{0,24}"
}

fn meta_plan() -> impl Strategy<Value = MetaPlan> {
    let call = (
        "[a-z_]{1,12}",
        prop::collection::btree_map("[a-z]{1,6}", text_field(), 0..3),
    )
        .prop_map(|(name, args)| {
            ToolCall::new(
                name,
                Value::Object(args.into_iter().map(|(k, v)| (k, json!(v))).collect()),
            )
        });
    let sub = (text_field(), text_field()).prop_map(|(query, answer)| SubQuery { query, answer });
    (
        text_field(),
        prop::collection::vec(call, 0..4),
        text_field(),
        text_field(),
        prop::collection::vec(sub, 0..3),
    )
        .prop_map(|(thought, tool_calls, audio, plan, queries)| MetaPlan {
            thought,
            tool_calls,
            audio,
            plan,
            queries,
        })
}

proptest! {
    #[test]
    fn meta_plan_round_trips(plan in meta_plan()) {
        let raw = serde_json::to_string(&plan).unwrap();
        prop_assert_eq!(parse_meta_plan(&raw).unwrap(), plan.clone());
        let pretty = serde_json::to_string_pretty(&plan).unwrap();
        let fenced = format!("```json\n{pretty}\n```");
        prop_assert_eq!(parse_meta_plan(&fenced).unwrap(), plan);
    }

    #[test]
    fn meta_plan_parse_never_panics(raw in "\\PC{0,80}") {
        let _ = parse_meta_plan(&raw);
    }
}

fn payload_event(values: &[(String, f64)]) -> Event {
    let payload: serde_json::Map<String, Value> = values
        .iter()
        .map(|(k, v)| (k.clone(), json!(format!("{k} was {v}"))))
        .collect();
    let call = ToolCall::new("lookup", json!({}));
    Event::ToolResult {
        iteration: 1,
        result: ToolResult {
            tool_name: call.name.clone(),
            args: call.args.clone(),
            outcome: mhrag_core::tools::Outcome::Ok {
                payload: Value::Object(payload),
            },
            latency: 0.0,
        },
        sub_query: None,
    }
}

proptest! {
    #[test]
    fn ledger_accepts_evidence_and_flags_inventions(
        facts in prop::collection::btree_map("[a-z]{3,8}", 1.0..1000.0f64, 1..6),
        pick in any::<prop::sample::Index>(),
    ) {
        let facts: Vec<(String, f64)> = facts.into_iter().collect();
        let events = vec![payload_event(&facts)];
        let (key, value) = &facts[pick.index(facts.len())];
        let traced = vec![
            SubQuery { query: key.clone(), answer: format!("{key} was {value}") },
            SubQuery { query: format!("{key} again"), answer: format!("{value}") },
            SubQuery { query: "open".into(), answer: String::new() },
        ];
        prop_assert!(validate_ledger(&events, &traced).is_empty());

        let invented = vec![SubQuery { query: key.clone(), answer: "987654321.5".into() }];
        prop_assert_eq!(validate_ledger(&events, &invented).len(), 1);
        let evidence = [format!("{key} was {value}")];
        prop_assert!(!is_traceable("no numbers and no match", &evidence));
    }
}

/// Random expression over small integers with its expected value.
fn int_expr() -> impl Strategy<Value = (String, i64)> {
    let leaf = (0i64..50).prop_map(|n| (n.to_string(), n));
    leaf.prop_recursive(4, 24, 2, |inner| {
        (inner.clone(), inner, 0..3usize).prop_map(|((a, x), (b, y), op)| match op {
            0 => (format!("({a})+({b})"), x + y),
            1 => (format!("({a})-({b})"), x - y),
            _ => (format!("({a})*({b})"), x * y),
        })
    })
}

proptest! {
    #[test]
    fn integer_arithmetic_is_exact((text, want) in int_expr()) {
        prop_assert_eq!(calculator::evaluate(&text).unwrap(), want as f64);
    }

    #[test]
    fn power_is_right_associative(a in 1u32..4, b in 0u32..3, c in 0u32..3) {
        let got = calculator::evaluate(&format!("{a}^{b}^{c}")).unwrap();
        let want = (a as f64).powf((b as f64).powf(c as f64));
        prop_assert_eq!(got, want);
        let neg = calculator::evaluate(&format!("-{a}^{b}")).unwrap();
        prop_assert_eq!(neg, -(a as f64).powf(b as f64));
    }

    #[test]
    fn formatted_numbers_parse_back(v in -1e12..1e12f64) {
        let shown: f64 = calculator::format_number(v).parse().unwrap();
        prop_assert!((shown - v).abs() <= 1e-13 * v.abs().max(1e-300));
    }

    #[test]
    fn calculator_never_panics(src in "[0-9+*/^%().× -]{0,30}") {
        if let Ok(v) = calculator::evaluate(&src) {
            prop_assert!(v.is_finite());
        }
    }
}

fn chunk(doc: &str, seq: u32, text: &str) -> Chunk {
    Chunk {
        chunk_id: format!("{doc}:{seq}"),
        doc_id: doc.to_string(),
        kind: ChunkKind::Prose,
        text: text.to_string(),
        char_span: (0, text.len()),
        seq,
        oversize: false,
    }
}

fn candidates() -> impl Strategy<Value = Vec<Vec<ScoredCandidate>>> {
    let cand =
        (0u8..12, -1.0..1.0f64, any::<bool>()).prop_map(|(id, score, dense)| ScoredCandidate {
            chunk_id: format!("c{id}"),
            score,
            source: if dense { Source::Dense } else { Source::Sparse },
        });
    prop::collection::vec(prop::collection::vec(cand, 0..10), 0..5)
}

proptest! {
    #[test]
    fn dedup_keeps_each_chunk_once_at_its_best(arms in candidates()) {
        let pool = dedup(&arms);
        let ids: BTreeSet<&str> = pool.iter().map(|e| e.chunk_id.as_str()).collect();
        prop_assert_eq!(ids.len(), pool.len());
        let all: BTreeSet<&str> = arms.iter().flatten().map(|c| c.chunk_id.as_str()).collect();
        prop_assert_eq!(&ids, &all);
        for e in &pool {
            let best = arms
                .iter()
                .flatten()
                .filter(|c| c.chunk_id == e.chunk_id)
                .map(|c| c.score)
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(e.score, best);
        }

        let dense: Vec<String> = arms.iter().flatten().filter(|c| c.source == Source::Dense).map(|c| c.chunk_id.clone()).collect();
        let sparse: Vec<String> = arms.iter().flatten().filter(|c| c.source == Source::Sparse).map(|c| c.chunk_id.clone()).collect();
        let ordered = round_robin(pool.clone(), &dense, &sparse);
        let mut a: Vec<&str> = ordered.iter().map(|e| e.chunk_id.as_str()).collect();
        let mut b: Vec<&str> = pool.iter().map(|e| e.chunk_id.as_str()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bm25_scores_are_positive_and_sorted(docs in prop::collection::vec(words(), 1..20), q in words(), k in 1usize..10) {
        let mut sp = SparseIndex::new(Bm25Params::default());
        for (i, d) in docs.iter().enumerate() {
            sp.insert(&format!("c{i}"), d);
        }
        let hits = sp.search(&q, k);
        prop_assert!(hits.len() <= k);
        for w in hits.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
        for (_, s) in &hits {
            prop_assert!(*s > 0.0);
        }
        for t in tokenize(&q) {
            prop_assert!(sp.idf(&t) > 0.0);
        }
    }

    #[test]
    fn exact_dense_scores_are_sorted_cosines(
        vs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 1..30),
        q in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm(&q) > 1e-6 && vs.iter().all(|v| norm(v) > 1e-6));
        let unit = |v: &[f64]| v.iter().map(|x| x / norm(v)).collect::<Vec<_>>();
        let mut idx = DenseIndex::new(4, DenseMode::Exact);
        for (i, v) in vs.iter().enumerate() {
            idx.insert(&format!("v{i}"), unit(v));
        }
        let hits = idx.search(&unit(&q), 5);
        prop_assert_eq!(hits.len(), vs.len().min(5));
        for w in hits.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
        for (_, s) in &hits {
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(s));
        }
    }

    #[test]
    fn removed_documents_leave_no_trace(
        docs in prop::collection::vec(prop::collection::vec(words(), 1..4), 1..8),
        drop in any::<prop::sample::Index>(),
    ) {
        let gw = Gateway::mock();
        let mut idx = HybridIndex::new(IndexConfig::new(gw.dim()));
        for (d, texts) in docs.iter().enumerate() {
            let chunks: Vec<Chunk> = texts.iter().enumerate().map(|(s, t)| chunk(&format!("d{d}"), s as u32, t)).collect();
            idx.upsert_chunks(&chunks, &gw.embed(texts).unwrap()).unwrap();
        }
        let gone = format!("d{}", drop.index(docs.len()));
        let removed = idx.remove_document(&gone);
        prop_assert_eq!(removed, docs[drop.index(docs.len())].len());
        prop_assert!(idx.chunks().all(|c| c.doc_id != gone));
        let prefix = format!("{gone}:");
        for texts in &docs {
            for t in texts {
                let v = gw.embed_one(t).unwrap();
                for c in idx.dense_search(&v, 50).unwrap().iter().chain(&idx.sparse_search(t, 50)) {
                    prop_assert!(!c.chunk_id.starts_with(&prefix));
                }
            }
        }
        let back = HybridIndex::from_bytes(&idx.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back.len(), idx.len());
        prop_assert_eq!(back.sparse_search(&docs[0][0], 10), idx.sparse_search(&docs[0][0], 10));
    }
}
