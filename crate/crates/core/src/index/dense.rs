//! Dense vector store with an exact scan mode and an HNSW mode.
//!
//! Removals are soft: the slot stays in the graph for navigation but is never
//! returned. Once more than half the slots are dead the store compacts itself
//! by rebuilding from the live slots in insertion order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hnsw::{Hnsw, HnswParams};
use crate::gateway::dot;

const COMPACT_MIN_SLOTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenseMode {
    Exact,
    Hnsw(HnswParams),
}

impl DenseMode {
    pub fn hnsw() -> Self {
        DenseMode::Hnsw(HnswParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    dim: usize,
    mode: DenseMode,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    alive: Vec<bool>,
    slots: BTreeMap<String, u32>,
    graph: Option<Hnsw>,
}

impl DenseIndex {
    pub fn new(dim: usize, mode: DenseMode) -> Self {
        Self {
            dim,
            mode,
            ids: Vec::new(),
            vectors: Vec::new(),
            alive: Vec::new(),
            slots: BTreeMap::new(),
            graph: match mode {
                DenseMode::Exact => None,
                DenseMode::Hnsw(p) => Some(Hnsw::new(p)),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> DenseMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Dead slots awaiting compaction.
    pub fn deleted(&self) -> usize {
        self.ids.len() - self.slots.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.slots.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.slots
            .get(id)
            .map(|&s| self.vectors[s as usize].as_slice())
    }

    /// Inserts or replaces. The caller guarantees dimension and unit norm.
    pub fn insert(&mut self, id: &str, vector: Vec<f64>) {
        debug_assert_eq!(vector.len(), self.dim);
        self.remove(id);
        let slot = self.ids.len() as u32;
        self.ids.push(id.to_string());
        self.vectors.push(vector);
        self.alive.push(true);
        self.slots.insert(id.to_string(), slot);
        if let Some(g) = &mut self.graph {
            g.insert(slot, &self.vectors);
        }
    }

    pub fn remove(&mut self, id: &str) -> bool {
        let Some(slot) = self.slots.remove(id) else {
            return false;
        };
        self.alive[slot as usize] = false;
        if self.ids.len() >= COMPACT_MIN_SLOTS && self.deleted() * 2 > self.ids.len() {
            self.compact();
        }
        true
    }

    /// Drops dead slots and rebuilds the graph from the live ones.
    pub fn compact(&mut self) {
        if self.deleted() == 0 {
            return;
        }
        let live: Vec<(String, Vec<f64>)> = self
            .ids
            .drain(..)
            .zip(self.vectors.drain(..))
            .zip(self.alive.drain(..))
            .filter_map(|(entry, alive)| alive.then_some(entry))
            .collect();
        self.slots.clear();
        if let DenseMode::Hnsw(p) = self.mode {
            let ef = self
                .graph
                .as_ref()
                .map_or(p.ef_search, |g| g.params().ef_search);
            self.graph = Some(Hnsw::new(HnswParams { ef_search: ef, ..p }));
        }
        for (id, v) in live {
            self.insert(&id, v);
        }
    }

    pub fn ef_search(&self) -> Option<usize> {
        self.graph.as_ref().map(|g| g.params().ef_search)
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        if let Some(g) = &mut self.graph {
            g.set_ef_search(ef);
        }
    }

    /// Top `k` live entries by dot product, ties broken by id ascending.
    pub fn search(&self, q: &[f64], k: usize) -> Vec<(String, f64)> {
        match &self.graph {
            None => self.exact(q, k),
            Some(g) => self.approximate(g, q, k, g.params().ef_search),
        }
    }

    /// As [`search`](Self::search) with a per-query beam width (HNSW only).
    pub fn search_ef(&self, q: &[f64], k: usize, ef: usize) -> Vec<(String, f64)> {
        match &self.graph {
            None => self.exact(q, k),
            Some(g) => self.approximate(g, q, k, ef),
        }
    }

    pub fn exact(&self, q: &[f64], k: usize) -> Vec<(String, f64)> {
        let hits = self
            .slots
            .iter()
            .map(|(id, &s)| (id.clone(), dot(q, &self.vectors[s as usize])))
            .collect();
        rank(hits, k)
    }

    fn approximate(&self, g: &Hnsw, q: &[f64], k: usize, ef: usize) -> Vec<(String, f64)> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let want = k.min(self.len());
        let mut ef = ef.max(k);
        loop {
            let hits: Vec<(String, f64)> = g
                .search(q, ef, &self.vectors)
                .into_iter()
                .filter(|(s, _)| self.alive[*s as usize])
                .map(|(s, sim)| (self.ids[s as usize].clone(), sim))
                .collect();
            if hits.len() >= want || ef >= self.ids.len() {
                return rank(hits, k);
            }
            ef = (ef * 2).min(self.ids.len());
        }
    }
}

fn rank(mut hits: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    hits.truncate(k);
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn exact_saturates_and_sorts() {
        let mut idx = DenseIndex::new(2, DenseMode::Exact);
        idx.insert("b", vec![1.0, 0.0]);
        idx.insert("a", vec![0.0, 1.0]);
        let hits = idx.search(&[0.6, 0.8], 10);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].0, "a");
        assert!(hits[0].1 >= hits[1].1);
    }

    #[test]
    fn hnsw_recall_on_small_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut idx = DenseIndex::new(32, DenseMode::hnsw());
        let mut exact = DenseIndex::new(32, DenseMode::Exact);
        for i in 0..400 {
            let v = random_unit(&mut rng, 32);
            idx.insert(&format!("{i:04}"), v.clone());
            exact.insert(&format!("{i:04}"), v);
        }
        let mut hit = 0;
        for _ in 0..50 {
            let q = random_unit(&mut rng, 32);
            let truth: Vec<String> = exact.search(&q, 10).into_iter().map(|h| h.0).collect();
            hit += idx
                .search(&q, 10)
                .iter()
                .filter(|h| truth.contains(&h.0))
                .count();
        }
        assert!(hit as f64 / 500.0 >= 0.95, "recall {}", hit as f64 / 500.0);
    }

    #[test]
    fn removed_entries_never_returned_and_compaction_keeps_live() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut idx = DenseIndex::new(8, DenseMode::hnsw());
        let vectors: Vec<Vec<f64>> = (0..100).map(|_| random_unit(&mut rng, 8)).collect();
        for (i, v) in vectors.iter().enumerate() {
            idx.insert(&format!("{i}"), v.clone());
        }
        for i in 0..60 {
            assert!(idx.remove(&format!("{i}")));
        }
        assert_eq!(idx.len(), 40);
        assert!(idx.deleted() < 40, "compaction should have run");
        for v in &vectors {
            for (id, _) in idx.search(v, 100) {
                assert!(id.parse::<usize>().unwrap() >= 60);
            }
        }
        assert_eq!(idx.search(&vectors[0], 100).len(), 40);
    }

    #[test]
    fn reinsert_replaces_vector() {
        let mut idx = DenseIndex::new(2, DenseMode::hnsw());
        idx.insert("x", vec![1.0, 0.0]);
        idx.insert("x", vec![0.0, 1.0]);
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.vector("x"), Some(&[0.0, 1.0][..]));
        let hits = idx.search(&[0.0, 1.0], 5);
        assert_eq!(hits, vec![("x".to_string(), 1.0)]);
    }
}
