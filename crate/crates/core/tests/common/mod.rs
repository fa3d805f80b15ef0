#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secgraph_core::config::{SchemeParams, SearchMode, Variant};
use secgraph_core::filters::FilterParams;
use secgraph_core::{ClientOptions, SecGraph};

/// Plaintext posting lists, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub lists: BTreeMap<String, Vec<(u64, u32)>>,
}

impl Oracle {
    pub fn insert(&mut self, w: &str, id: u64, weight: u32) {
        self.lists.entry(w.to_owned()).or_default().push((id, weight));
    }

    pub fn remove(&mut self, w: &str, id: u64) {
        if let Some(l) = self.lists.get_mut(w) {
            l.retain(|&(x, _)| x != id);
        }
    }

    pub fn pairs(&self) -> Vec<(String, u64, u32)> {
        self.lists
            .iter()
            .flat_map(|(w, l)| l.iter().map(move |&(id, v)| (w.clone(), id, v)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.lists.values().map(Vec::len).sum()
    }

    /// Brute-force intersection, ranked by the first keyword's weights.
    pub fn query(&self, keywords: &[String]) -> Vec<(u64, u32)> {
        let empty = Vec::new();
        let first = self.lists.get(&keywords[0]).unwrap_or(&empty);
        let rest: Vec<BTreeSet<u64>> = keywords[1..]
            .iter()
            .map(|w| self.lists.get(w).map(|l| l.iter().map(|p| p.0).collect()).unwrap_or_default())
            .collect();
        let mut hits: Vec<(u64, u32)> = first
            .iter()
            .copied()
            .filter(|(id, _)| rest.iter().all(|s| s.contains(id)))
            .collect();
        hits.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        hits
    }
}

/// A seeded undirected graph with distinct edges and weights in 1..=10.
pub fn random_graph(vertices: u64, edges: usize, seed: u64) -> Oracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut oracle = Oracle::default();
    while seen.len() < edges {
        let a = rng.random_range(1..=vertices);
        let b = rng.random_range(1..=vertices);
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        let w = rng.random_range(1..=10);
        oracle.insert(&format!("{a}:friendship"), b, w);
        oracle.insert(&format!("{b}:friendship"), a, w);
    }
    oracle
}

/// Conjunctive queries over keywords that share at least one neighbour,
/// so that results are mostly non-empty.
pub fn random_queries(oracle: &Oracle, count: usize, n: std::ops::RangeInclusive<usize>, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<&String> = oracle.lists.keys().collect();
    (0..count)
        .map(|_| {
            let n = rng.random_range(n.clone());
            let mut q: Vec<String> = Vec::new();
            while q.len() < n {
                let w = (*keys.choose(&mut rng).unwrap()).clone();
                if !q.contains(&w) {
                    q.push(w);
                }
            }
            q
        })
        .collect()
}

pub fn params(variant: Variant, capacity: usize) -> SchemeParams {
    SchemeParams::new(SearchMode::Exact, FilterParams::new(16, capacity, 4).unwrap(), variant.config()).unwrap()
}

pub fn build(params: SchemeParams, oracle: &Oracle, seed: u64) -> SecGraph {
    let mut g = SecGraph::create(
        params,
        ClientOptions {
            seed: Some(seed),
            ..ClientOptions::default()
        },
    )
    .unwrap();
    for (w, id, v) in oracle.pairs() {
        g.insert(&w, id, v).unwrap();
    }
    g
}

pub fn hits(r: &secgraph_core::RankedResult) -> Vec<(u64, u32)> {
    r.hits.iter().map(|h| (h.id, h.weight)).collect()
}
