//! Hierarchical navigable small-world graph over slot ids.
//!
//! The graph only stores links; vectors live in the owning
//! [`DenseIndex`](super::dense::DenseIndex) and are passed in by reference.
//! Similarity is the dot product of unit vectors.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::dot;

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 keeps `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    sim: f64,
    id: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hnsw {
    params: HnswParams,
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    top: usize,
}

impl Hnsw {
    pub fn new(params: HnswParams) -> Self {
        assert!(params.m >= 2, "HNSW needs m >= 2");
        Self {
            params,
            links: Vec::new(),
            entry: None,
            top: 0,
        }
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    /// Level for node `id`; a function of the seed and id only, so rebuilds
    /// and reloaded graphs draw the same levels.
    fn draw_level(&self, id: u32) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.params.seed ^ u64::from(id).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let u: f64 = 1.0 - rng.random::<f64>();
        let ml = 1.0 / (self.params.m as f64).ln();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    /// Adds the next slot; `vectors[id]` must be its vector and `id` must
    /// equal the current node count.
    pub fn insert(&mut self, id: u32, vectors: &[Vec<f64>]) {
        assert_eq!(
            id as usize,
            self.links.len(),
            "HNSW ids must be dense and ordered"
        );
        let level = self.draw_level(id);
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(mut ep) = self.entry else {
            self.entry = Some(id);
            self.top = level;
            return;
        };
        let q = &vectors[id as usize];
        for layer in (level + 1..=self.top).rev() {
            ep = self.greedy(q, ep, layer, vectors);
        }
        let mut entries = vec![ep];
        for layer in (0..=level.min(self.top)).rev() {
            let found = self.search_layer(q, &entries, self.params.ef_construction, layer, vectors);
            let chosen = self.select(&found, self.params.m, vectors);
            self.links[id as usize][layer] = chosen.clone();
            for &n in &chosen {
                self.connect(n, id, layer, vectors);
            }
            entries = found.iter().map(|c| c.id).collect();
        }
        if level > self.top {
            self.top = level;
            self.entry = Some(id);
        }
    }

    fn connect(&mut self, node: u32, new: u32, layer: usize, vectors: &[Vec<f64>]) {
        let cap = self.max_links(layer);
        let list = &mut self.links[node as usize][layer];
        list.push(new);
        if list.len() <= cap {
            return;
        }
        let base = &vectors[node as usize];
        let mut cands: Vec<Cand> = list
            .iter()
            .map(|&id| Cand {
                sim: dot(base, &vectors[id as usize]),
                id,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        self.links[node as usize][layer] = self.select(&cands, cap, vectors);
    }

    /// Neighbor-selection heuristic: keep a candidate only if it is closer to
    /// the base (its `sim`) than to every neighbor kept so far, then top up with the
    /// closest discarded ones. `cands` must be sorted best first.
    fn select(&self, cands: &[Cand], m: usize, vectors: &[Vec<f64>]) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for c in cands {
            if kept.len() >= m {
                break;
            }
            let v = &vectors[c.id as usize];
            if kept.iter().all(|&k| dot(v, &vectors[k as usize]) < c.sim) {
                kept.push(c.id);
            } else {
                pruned.push(c.id);
            }
        }
        for id in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(id);
        }
        kept
    }

    fn greedy(&self, q: &[f64], mut ep: u32, layer: usize, vectors: &[Vec<f64>]) -> u32 {
        let mut best = dot(q, &vectors[ep as usize]);
        loop {
            let mut moved = false;
            for &n in &self.links[ep as usize][layer] {
                let s = dot(q, &vectors[n as usize]);
                if s > best {
                    best = s;
                    ep = n;
                    moved = true;
                }
            }
            if !moved {
                return ep;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes, best first.
    fn search_layer(
        &self,
        q: &[f64],
        entries: &[u32],
        ef: usize,
        layer: usize,
        vectors: &[Vec<f64>],
    ) -> Vec<Cand> {
        let mut visited: HashSet<u32> = entries.iter().copied().collect();
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        let mut best: BinaryHeap<std::cmp::Reverse<Cand>> = BinaryHeap::new();
        for &e in entries {
            let c = Cand {
                sim: dot(q, &vectors[e as usize]),
                id: e,
            };
            frontier.push(c);
            best.push(std::cmp::Reverse(c));
            if best.len() > ef {
                best.pop();
            }
        }
        while let Some(c) = frontier.pop() {
            let worst = best.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
            if c.sim < worst && best.len() >= ef {
                break;
            }
            for &n in &self.links[c.id as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let cand = Cand {
                    sim: dot(q, &vectors[n as usize]),
                    id: n,
                };
                let worst = best.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
                if best.len() < ef || cand.sim > worst {
                    frontier.push(cand);
                    best.push(std::cmp::Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate nearest slots to `q`, best first, at most `ef` of them.
    pub fn search(&self, q: &[f64], ef: usize, vectors: &[Vec<f64>]) -> Vec<(u32, f64)> {
        let Some(mut ep) = self.entry else {
            return Vec::new();
        };
        for layer in (1..=self.top).rev() {
            ep = self.greedy(q, ep, layer, vectors);
        }
        self.search_layer(q, &[ep], ef.max(1), 0, vectors)
            .into_iter()
            .map(|c| (c.id, c.sim))
            .collect()
    }
}
