//! Filtered-ranking link prediction metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{HkgError, Result};
use crate::model::{EntityId, HyperFact, Qualifier, RelationId, Triple};
use crate::models::{inverse, Direction, LinkPredictor, Query};
use crate::par::{self, Mode};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FilterKey {
    anchor: EntityId,
    relation: RelationId,
    qualifiers: Vec<Qualifier>,
}

/// Known true answers per query key. Keys include the qualifier multiset when
/// built for hyper-relational models and only `(anchor, relation)` otherwise.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    with_qualifiers: bool,
    answers: HashMap<FilterKey, Vec<EntityId>>,
}

impl FilterIndex {
    pub fn new(with_qualifiers: bool) -> Self {
        FilterIndex {
            with_qualifiers,
            answers: HashMap::new(),
        }
    }

    /// Object and inverse-subject keys for every fact.
    pub fn from_facts<'a>(facts: impl IntoIterator<Item = &'a HyperFact>, n_relations: usize) -> Self {
        let mut index = FilterIndex::new(true);
        for f in facts {
            for q in Query::both(f, n_relations) {
                index.insert(&q);
            }
        }
        index.finish()
    }

    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>, n_relations: usize) -> Self {
        let mut index = FilterIndex::new(false);
        for t in triples {
            index.insert_answer(t.subject, t.relation, &[], t.object);
            index.insert_answer(t.object, inverse(t.relation, n_relations), &[], t.subject);
        }
        index.finish()
    }

    pub fn with_qualifiers(&self) -> bool {
        self.with_qualifiers
    }

    fn key(&self, anchor: EntityId, relation: RelationId, qualifiers: &[Qualifier]) -> FilterKey {
        let mut qualifiers = if self.with_qualifiers { qualifiers.to_vec() } else { Vec::new() };
        qualifiers.sort_unstable();
        FilterKey {
            anchor,
            relation,
            qualifiers,
        }
    }

    fn insert_answer(&mut self, anchor: EntityId, relation: RelationId, qualifiers: &[Qualifier], answer: EntityId) {
        let key = self.key(anchor, relation, qualifiers);
        self.answers.entry(key).or_default().push(answer);
    }

    pub fn insert(&mut self, q: &Query) {
        self.insert_answer(q.anchor, q.relation, &q.qualifiers, q.answer);
    }

    /// Sorts and deduplicates answer lists; call after the last insertion.
    pub fn finish(mut self) -> Self {
        for v in self.answers.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        self
    }

    pub fn n_keys(&self) -> usize {
        self.answers.len()
    }

    /// All known answers of the query's key (sorted).
    pub fn answers(&self, q: &Query) -> &[EntityId] {
        self.answers
            .get(&self.key(q.anchor, q.relation, &q.qualifiers))
            .map_or(&[], Vec::as_slice)
    }

    /// Known answers other than the query's own answer, as candidate indices.
    pub fn filter_set(&self, q: &Query) -> Vec<usize> {
        self.answers(q)
            .iter()
            .filter(|&&e| e != q.answer)
            .map(|e| e.0 as usize)
            .collect()
    }
}

/// `1 + #{c not filtered: s_c > s_t} + #{c not filtered, c != t: s_c = s_t} / 2`.
pub fn filtered_rank(scores: &[f64], target: usize, filter: &[usize]) -> Result<f64> {
    if filter.contains(&target) {
        return Err(HkgError::FilterContainsTarget(target));
    }
    let st = scores[target];
    let mut excluded = vec![false; scores.len()];
    for &f in filter {
        if let Some(x) = excluded.get_mut(f) {
            *x = true;
        }
    }
    let (mut above, mut ties) = (0usize, 0usize);
    for (c, &s) in scores.iter().enumerate() {
        if c == target || excluded[c] {
            continue;
        }
        if s > st {
            above += 1;
        } else if s == st {
            ties += 1;
        }
    }
    Ok(1.0 + above as f64 + ties as f64 / 2.0)
}

/// Rank without filtering.
pub fn raw_rank(scores: &[f64], target: usize) -> f64 {
    filtered_rank(scores, target, &[]).expect("empty filter")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hits_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        let n = ranks.len();
        let denom = n.max(1) as f64;
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / denom;
        let hits_at = HITS_AT
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / denom))
            .collect();
        MetricsReport {
            mrr,
            hits_at,
            n_queries: n,
        }
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.hits_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// Monotone hits, `hits@1 <= mrr <= 1`.
    pub fn is_consistent(&self) -> bool {
        let hits: Vec<f64> = self.hits_at.values().copied().collect();
        let monotone = hits.windows(2).all(|w| w[0] <= w[1]);
        self.n_queries == 0 || (monotone && self.mrr <= 1.0 && self.mrr + 1e-12 >= self.hits(1) && self.mrr > 0.0)
    }
}

/// Metrics for object queries, subject queries, and both pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub object: MetricsReport,
    pub subject: MetricsReport,
    pub average: MetricsReport,
}

/// Ranked query with the slot it predicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalQuery {
    pub query: Query,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Candidates `0..n_ranked` are ranked; others are ignored.
    pub n_ranked: usize,
    pub batch_size: usize,
    pub mode: Mode,
}

/// Filtered ranks in query order.
pub fn ranks(model: &dyn LinkPredictor, queries: &[EvalQuery], filter: &FilterIndex, opts: EvalOptions) -> Result<Vec<f64>> {
    let batches: Vec<&[EvalQuery]> = queries.chunks(opts.batch_size.max(1)).collect();
    let per_batch = par::map(&batches, opts.mode, |batch| -> Result<Vec<f64>> {
        let qs: Vec<Query> = batch.iter().map(|q| q.query.clone()).collect();
        let scores = model.score(&qs)?;
        qs.iter()
            .zip(&scores)
            .map(|(q, s)| {
                let target = q.answer.0 as usize;
                if target >= opts.n_ranked {
                    return Err(HkgError::Config(format!("answer {target} is outside the ranked candidates")));
                }
                let filter: Vec<usize> = filter.filter_set(q).into_iter().filter(|&c| c < opts.n_ranked).collect();
                filtered_rank(&s[..opts.n_ranked], target, &filter)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(queries.len());
    for b in per_batch {
        out.extend(b?);
    }
    Ok(out)
}

pub fn evaluate(
    model: &dyn LinkPredictor,
    queries: &[EvalQuery],
    filter: &FilterIndex,
    opts: EvalOptions,
) -> Result<EvaluationReport> {
    let r = ranks(model, queries, filter, opts)?;
    Ok(report_from_ranks(queries, &r))
}

pub fn report_from_ranks(queries: &[EvalQuery], ranks: &[f64]) -> EvaluationReport {
    let pick = |d: Direction| -> Vec<f64> {
        queries
            .iter()
            .zip(ranks)
            .filter(|(q, _)| q.direction == d)
            .map(|(_, &r)| r)
            .collect()
    };
    EvaluationReport {
        object: MetricsReport::from_ranks(&pick(Direction::Object)),
        subject: MetricsReport::from_ranks(&pick(Direction::Subject)),
        average: MetricsReport::from_ranks(ranks),
    }
}
