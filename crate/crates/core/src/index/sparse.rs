//! Okapi BM25 over an in-memory inverted index.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Term postings keyed by chunk id, so every postings list iterates in
/// chunk-id order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    params: Bm25Params,
    postings: BTreeMap<String, BTreeMap<String, u32>>,
    doc_lengths: BTreeMap<String, usize>,
    total_length: usize,
}

impl SparseIndex {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Indexes `text` under `chunk_id`, replacing any previous text.
    pub fn insert(&mut self, chunk_id: &str, text: &str) {
        self.remove(chunk_id);
        let tokens = tokenize(text);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, n) in tf {
            self.postings
                .entry(term)
                .or_default()
                .insert(chunk_id.to_string(), n);
        }
        self.total_length += tokens.len();
        self.doc_lengths.insert(chunk_id.to_string(), tokens.len());
    }

    pub fn remove(&mut self, chunk_id: &str) -> bool {
        let Some(len) = self.doc_lengths.remove(chunk_id) else {
            return false;
        };
        self.total_length -= len;
        self.postings.retain(|_, list| {
            list.remove(chunk_id);
            !list.is_empty()
        });
        true
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avgdl(&self) -> f64 {
        if self.doc_lengths.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.doc_lengths.len() as f64
        }
    }

    pub fn doc_length(&self, chunk_id: &str) -> Option<usize> {
        self.doc_lengths.get(chunk_id).copied()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Document frequency of an already-tokenized term.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, BTreeMap::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every chunk matching at least one query term. Repeated
    /// query terms count once.
    pub fn scores(&self, query: &str) -> BTreeMap<String, f64> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let avgdl = self.avgdl();
        let Bm25Params { k1, b } = self.params;
        let mut acc: BTreeMap<String, f64> = BTreeMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for (chunk_id, &tf) in list {
                let tf = f64::from(tf);
                let dl = self.doc_lengths[chunk_id] as f64;
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let s = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
                *acc.entry(chunk_id.clone()).or_default() += s;
            }
        }
        acc
    }

    /// Top `k` by score, ties broken by chunk id ascending.
    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut hits: Vec<(String, f64)> = self.scores(query).into_iter().collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> SparseIndex {
        let mut idx = SparseIndex::new(Bm25Params::default());
        idx.insert("a", "net revenue rose in 2014");
        idx.insert("b", "net revenue fell in 2013");
        idx.insert("c", "board of directors");
        idx
    }

    #[test]
    fn hand_evaluated_score() {
        let idx = corpus();
        // "2014" occurs once, only in `a` (5 tokens); avgdl = 13/3.
        let idf = (1.0f64 + (3.0 - 1.0 + 0.5) / 1.5).ln();
        let expected = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 5.0 / (13.0 / 3.0)));
        let hits = idx.search("2014", 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "a");
        assert!((hits[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn ubiquitous_term_keeps_positive_idf() {
        let mut idx = SparseIndex::new(Bm25Params::default());
        for id in ["x", "y", "z"] {
            idx.insert(id, "revenue");
        }
        let idf = idx.idf("revenue");
        assert!((idf - (1.0f64 + 0.5 / 3.5).ln()).abs() < 1e-15);
        assert!(idf > 0.0 && idf.is_finite());
    }

    #[test]
    fn reinsert_replaces_text() {
        let mut idx = corpus();
        idx.insert("a", "completely different words");
        assert!(idx.search("2014", 5).is_empty());
        assert_eq!(idx.n_docs(), 3);
        assert_eq!(idx.doc_length("a"), Some(3));
    }

    #[test]
    fn removal_updates_statistics() {
        let mut idx = corpus();
        assert!(idx.remove("c"));
        assert!(!idx.remove("c"));
        assert_eq!(idx.n_docs(), 2);
        assert!((idx.avgdl() - 5.0).abs() < 1e-12);
        assert!(idx.search("board", 5).is_empty());
        assert_eq!(idx.doc_freq("board"), 0);
    }

    #[test]
    fn ties_break_by_chunk_id() {
        let mut idx = SparseIndex::new(Bm25Params::default());
        idx.insert("b", "same text");
        idx.insert("a", "same text");
        let hits = idx.search("same", 5);
        assert_eq!(hits[0].0, "a");
        assert_eq!(hits[0].1, hits[1].1);
    }

    #[test]
    fn no_indexed_terms_is_empty() {
        assert!(corpus().search("zzz", 5).is_empty());
        assert!(corpus().search("", 5).is_empty());
    }
}
