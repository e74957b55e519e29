//! Seeded generators for synthetic hyper-relational graphs and plain graphs.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::ingest::Interner;
use crate::model::{EntityId, HyperFact, HyperGraph, Qualifier, RelationId, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Facts per split: train, valid, test.
    pub n_facts: [usize; 3],
    /// Fraction of facts that carry qualifiers.
    pub hyper_fraction: f64,
    /// Qualifier count of a hyper-fact, drawn uniformly from this range.
    pub qualifiers: (usize, usize),
    /// Exponent of the Zipf law over entity popularity; 0 is uniform.
    pub zipf_exponent: f64,
}

impl SyntheticConfig {
    /// 50 facts over 20 entities and 5 relations, at most 3 qualifiers.
    pub fn memorization() -> Self {
        SyntheticConfig {
            n_entities: 20,
            n_relations: 5,
            n_facts: [50, 0, 0],
            hyper_fraction: 0.6,
            qualifiers: (1, 3),
            zipf_exponent: 0.0,
        }
    }

    /// Same vocabulary sizes and split sizes as Cleaned JF17k.
    pub fn jf17k_like() -> Self {
        SyntheticConfig {
            n_entities: 25_092,
            n_relations: 320,
            n_facts: [49_120, 12_280, 17_635],
            hyper_fraction: 0.31,
            qualifiers: (1, 4),
            zipf_exponent: 0.8,
        }
    }

    /// Same vocabulary and split sizes as FBAUTO.
    pub fn fbauto_like() -> Self {
        SyntheticConfig {
            n_entities: 2_094,
            n_relations: 8,
            n_facts: [6_778, 2_255, 2_180],
            hyper_fraction: 0.66,
            qualifiers: (1, 3),
            zipf_exponent: 0.6,
        }
    }
}

struct EntitySampler {
    n: usize,
    zipf: Option<Zipf<f64>>,
}

impl EntitySampler {
    fn new(n: usize, exponent: f64) -> Self {
        let zipf = (exponent > 0.0).then(|| Zipf::new(n as u64, exponent).expect("valid zipf parameters"));
        EntitySampler { n, zipf }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match &self.zipf {
            Some(z) => (z.sample(rng) as usize - 1).min(self.n - 1),
            None => rng.gen_range(0..self.n),
        }
    }
}

/// Raw-index fact with `n_qualifiers` qualifiers; entities uniform.
pub fn random_fact(rng: &mut ChaCha8Rng, n_entities: usize, n_relations: usize, n_qualifiers: usize) -> HyperFact {
    let e = |rng: &mut ChaCha8Rng| EntityId(rng.gen_range(0..n_entities as u32));
    let r = |rng: &mut ChaCha8Rng| RelationId(rng.gen_range(0..n_relations as u32));
    let (s, rel, o) = (e(rng), r(rng), e(rng));
    let qualifiers = (0..n_qualifiers).map(|_| Qualifier::new(r(rng), e(rng))).collect();
    HyperFact::new(s, rel, o).with_qualifiers(qualifiers)
}

/// Generates a graph whose labels (`e{i}`, `r{i}`) are interned in first-seen
/// order. Statements are unique across all splits.
pub fn generate(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> HyperGraph {
    let sampler = EntitySampler::new(cfg.n_entities, cfg.zipf_exponent);
    let mut graph = HyperGraph::default();
    let mut seen = HashSet::new();
    let target: usize = cfg.n_facts.iter().sum();
    let max_attempts = target.saturating_mul(50).max(1000);
    let mut attempts = 0;
    for split in Split::ALL {
        let want = cfg.n_facts[split as usize];
        while graph.split(split).len() < want && attempts < max_attempts {
            attempts += 1;
            let n_q = if rng.gen_bool(cfg.hyper_fraction.clamp(0.0, 1.0)) {
                rng.gen_range(cfg.qualifiers.0.max(1)..=cfg.qualifiers.1.max(1))
            } else {
                0
            };
            let s = sampler.sample(rng);
            let mut o = sampler.sample(rng);
            if o == s && cfg.n_entities > 1 {
                o = (o + 1 + rng.gen_range(0..cfg.n_entities - 1)) % cfg.n_entities;
            }
            let r = rng.gen_range(0..cfg.n_relations);
            let quals: Vec<(usize, usize)> = (0..n_q)
                .map(|_| (rng.gen_range(0..cfg.n_relations), sampler.sample(rng)))
                .collect();
            let mut key = quals.clone();
            key.sort_unstable();
            if !seen.insert((s, r, o, key)) {
                continue;
            }
            let interner = Interner {
                entities: &mut graph.entities,
                relations: &mut graph.relations,
            };
            let mut ent = |i: usize| interner.entities.intern(&format!("e{i}")).expect("non-empty label");
            let (s, o) = (ent(s), ent(o));
            let quals_e: Vec<EntityId> = quals.iter().map(|&(_, e)| ent(e)).collect();
            let mut rel = |i: usize| interner.relations.intern(&format!("r{i}")).expect("non-empty label");
            let r = rel(r);
            let qualifiers = quals
                .iter()
                .zip(quals_e)
                .map(|(&(qr, _), qe)| Qualifier::new(rel(qr), qe))
                .collect();
            graph
                .split_mut(split)
                .push(HyperFact::new(s, r, o).with_qualifiers(qualifiers));
        }
    }
    graph
}

/// Erdős-Rényi `G(n, p)` edge list with `u < v`.
pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}
