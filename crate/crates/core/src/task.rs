//! Turns a [`HyperGraph`] into what a model kind trains and is evaluated on:
//! training queries, evaluation queries per split, message-passing edges, and
//! the filter index.

use std::collections::HashSet;

use crate::decompose::{
    composite_label, decompose_direct, decompose_graph, decompose_prune, promoted_relation_label, pseudo_entity_label,
    reify_with, DecomposedGraph, Method, ReifyRelations, REIFY_OBJECT, REIFY_PREDICATE, REIFY_SUBJECT,
};
use crate::error::{HkgError, Result};
use crate::evaluation::{EvalQuery, FilterIndex};
use crate::model::{EntityId, HyperFact, HyperGraph, RelationId, Split, Triple, Vocab};
use crate::models::{inverse, Direction, ModelDims, ModelKind, Query};

#[derive(Debug, Clone)]
pub struct Task {
    pub kind: ModelKind,
    pub method: Option<Method>,
    /// Model-space vocabularies (synthesized labels included).
    pub entities: Vocab<EntityId>,
    pub relations: Vocab<RelationId>,
    /// Source entities keep their ids; only `0..n_answer_entities` are ranked.
    pub n_answer_entities: usize,
    pub train_queries: Vec<Query>,
    pub eval: [Vec<EvalQuery>; 3],
    /// Training-split edges used for message passing.
    pub graph_edges: Vec<Triple>,
    pub filter: FilterIndex,
    /// Facts whose qualifier list was cut to the configured maximum.
    pub truncated_facts: usize,
}

/// Checks that training signal comes from the training split only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LeakageAudit {
    pub n_graph_edges: usize,
    pub n_training_queries: usize,
    /// Edges or queries not derivable from a training fact; must be 0.
    pub foreign: usize,
    /// Held-out evaluation targets that also occur as a training target or edge
    /// through a distinct training fact (legitimate shared main triples).
    pub heldout_targets_seen: usize,
}

impl Task {
    /// `max_qualifiers` applies to hyper-relational models only; longer
    /// qualifier lists keep their first entries in canonical order.
    pub fn build(graph: &HyperGraph, kind: ModelKind, method: Option<Method>, max_qualifiers: Option<usize>) -> Result<Task> {
        if kind.is_hyper_relational() {
            if !matches!(method, None | Some(Method::Prune)) {
                return Err(HkgError::Config(format!(
                    "{kind} reads qualifiers directly; its graph encoder always uses the prune decomposition"
                )));
            }
            Ok(Self::hyper_relational(graph, kind, max_qualifiers))
        } else {
            let method = method.ok_or_else(|| {
                HkgError::Config(format!("{kind} needs a decomposition method (prune|direct|hyper|reify)"))
            })?;
            let dec = decompose_graph(graph, method)?;
            Ok(Self::decomposed(graph, kind, &dec))
        }
    }

    fn hyper_relational(graph: &HyperGraph, kind: ModelKind, max_qualifiers: Option<usize>) -> Task {
        let n_rel = graph.relations.len();
        let mut truncated_facts = 0;
        let cut = |f: &HyperFact, truncated: &mut usize| -> HyperFact {
            let mut f = f.clone();
            f.qualifiers = f.sorted_qualifiers();
            if let Some(m) = max_qualifiers {
                if f.qualifiers.len() > m {
                    f.qualifiers.truncate(m);
                    *truncated += 1;
                }
            }
            f
        };
        let splits: [Vec<HyperFact>; 3] =
            Split::ALL.map(|s| graph.split(s).iter().map(|f| cut(f, &mut truncated_facts)).collect());
        if truncated_facts > 0 {
            log::warn!(
                "{truncated_facts} facts exceed {} qualifiers and were truncated",
                max_qualifiers.unwrap_or(0)
            );
        }
        let train_queries = splits[0].iter().flat_map(|f| Query::both(f, n_rel)).collect();
        let eval = [0, 1, 2].map(|i| {
            splits[i]
                .iter()
                .flat_map(|f| {
                    let [o, s] = Query::both(f, n_rel);
                    [
                        EvalQuery {
                            query: o,
                            direction: Direction::Object,
                        },
                        EvalQuery {
                            query: s,
                            direction: Direction::Subject,
                        },
                    ]
                })
                .collect()
        });
        let mut graph_edges: Vec<Triple> = splits[0].iter().map(HyperFact::main_triple).collect();
        graph_edges.sort_unstable();
        graph_edges.dedup();
        let filter = FilterIndex::from_facts(splits.iter().flatten(), n_rel);
        Task {
            kind,
            method: None,
            entities: graph.entities.clone(),
            relations: graph.relations.clone(),
            n_answer_entities: graph.entities.len(),
            train_queries,
            eval,
            graph_edges,
            filter,
            truncated_facts,
        }
    }

    fn decomposed(graph: &HyperGraph, kind: ModelKind, dec: &DecomposedGraph) -> Task {
        let n_rel = dec.relations.len();
        let both = |t: &Triple| {
            [
                Query {
                    anchor: t.subject,
                    relation: t.relation,
                    qualifiers: Vec::new(),
                    answer: t.object,
                },
                Query {
                    anchor: t.object,
                    relation: inverse(t.relation, n_rel),
                    qualifiers: Vec::new(),
                    answer: t.subject,
                },
            ]
        };
        let graph_edges = dec.training_edges();
        let train_queries = graph_edges.iter().flat_map(both).collect();
        let eval = Split::ALL.map(|split| {
            let st = dec.split(split);
            (0..graph.split(split).len())
                .flat_map(|i| {
                    let ts = st.fact_triples(i);
                    let (object, subject) = if dec.method == Method::Reify {
                        // (hub, _reify:object, o) and (hub, _reify:subject, s)
                        let [subj, obj] = [ts[0], ts[1]];
                        (both(&obj)[0].clone(), both(&subj)[0].clone())
                    } else {
                        let [o, s] = both(&ts[0]);
                        (o, s)
                    };
                    [
                        EvalQuery {
                            query: object,
                            direction: Direction::Object,
                        },
                        EvalQuery {
                            query: subject,
                            direction: Direction::Subject,
                        },
                    ]
                })
                .collect()
        });
        let filter = FilterIndex::from_triples(Split::ALL.iter().flat_map(|&s| dec.split(s).triples.iter()), n_rel);
        Task {
            kind,
            method: Some(dec.method),
            entities: dec.entities.clone(),
            relations: dec.relations.clone(),
            n_answer_entities: dec.n_source_entities,
            train_queries,
            eval,
            graph_edges,
            filter,
            truncated_facts: 0,
        }
    }

    /// Forward relations in model space (inverses add the same number again).
    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn dims(&self, dim: usize) -> ModelDims {
        ModelDims {
            n_entities: self.entities.len(),
            n_candidates: self.entities.len(),
            n_relations: self.n_relations(),
            dim,
        }
    }

    pub fn eval_queries(&self, split: Split) -> &[EvalQuery] {
        &self.eval[split as usize]
    }

    /// Re-derives every training-split fact's contribution from `graph` by label
    /// lookup and checks the task's edges and training queries against it.
    pub fn audit_leakage(&self, graph: &HyperGraph) -> Result<LeakageAudit> {
        let n_rel = self.n_relations();
        let mut allowed: HashSet<Triple> = HashSet::new();
        let mut allowed_queries: HashSet<Query> = HashSet::new();
        for (i, f) in graph.train.iter().enumerate() {
            let triples = match self.method {
                None => {
                    for query in Query::both(f, n_rel) {
                        allowed_queries.insert(Query { qualifiers: Vec::new(), ..query });
                    }
                    decompose_prune(f)
                }
                Some(Method::Prune) => decompose_prune(f),
                Some(Method::Direct) => decompose_direct(f),
                Some(Method::Hyper) => {
                    let mut out = decompose_direct(f);
                    for q in &f.qualifiers {
                        let label = composite_label(graph.relations.label(f.relation), graph.relations.label(q.relation));
                        let r = self.relations.get(&label).ok_or_else(|| missing(&label))?;
                        out.push(Triple::new(q.entity, r, f.object));
                    }
                    out
                }
                Some(Method::Reify) => {
                    let hub_label = pseudo_entity_label(Split::Train, i);
                    let hub = self.entities.get(&hub_label).ok_or_else(|| missing(&hub_label))?;
                    let promoted_label = promoted_relation_label(graph.relations.label(f.relation));
                    let promoted = self.entities.get(&promoted_label).ok_or_else(|| missing(&promoted_label))?;
                    let rel = |l: &str| self.relations.get(l).ok_or_else(|| missing(l));
                    let rels = ReifyRelations {
                        subject: rel(REIFY_SUBJECT)?,
                        object: rel(REIFY_OBJECT)?,
                        predicate: rel(REIFY_PREDICATE)?,
                    };
                    reify_with(f, hub, promoted, rels)
                }
            };
            allowed.extend(triples);
        }
        let as_triple = |q: &Query| {
            let r = q.relation.0 as usize;
            if r >= n_rel {
                Triple::new(q.answer, RelationId((r - n_rel) as u32), q.anchor)
            } else {
                Triple::new(q.anchor, q.relation, q.answer)
            }
        };
        let mut foreign = self.graph_edges.iter().filter(|t| !allowed.contains(t)).count();
        foreign += self
            .train_queries
            .iter()
            .filter(|q| {
                if self.method.is_none() {
                    !allowed_queries.contains(&Query {
                        qualifiers: Vec::new(),
                        ..(*q).clone()
                    })
                } else {
                    !allowed.contains(&as_triple(q))
                }
            })
            .count();
        let seen: HashSet<Triple> = self.graph_edges.iter().copied().collect();
        let heldout_targets_seen = [Split::Valid, Split::Test]
            .iter()
            .flat_map(|&s| self.eval_queries(s))
            .filter(|q| q.direction == Direction::Object && seen.contains(&as_triple(&q.query)))
            .count();
        Ok(LeakageAudit {
            n_graph_edges: self.graph_edges.len(),
            n_training_queries: self.train_queries.len(),
            foreign,
            heldout_targets_seen,
        })
    }
}

fn missing(label: &str) -> HkgError {
    HkgError::Config(format!("label `{label}` missing from the task vocabulary"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Qualifier;

    fn graph() -> HyperGraph {
        let mut g = HyperGraph::default();
        for l in ["a", "b", "c", "d"] {
            g.entities.intern(l).unwrap();
        }
        for l in ["r", "q"] {
            g.relations.intern(l).unwrap();
        }
        let f = |s, r, o, qs: &[(u32, u32)]| {
            HyperFact::new(EntityId(s), RelationId(r), EntityId(o))
                .with_qualifiers(qs.iter().map(|&(r, e)| Qualifier::new(RelationId(r), EntityId(e))).collect())
        };
        g.train = vec![f(0, 0, 1, &[(1, 2)]), f(1, 0, 2, &[])];
        g.valid = vec![f(2, 0, 3, &[(1, 0)])];
        g.test = vec![f(0, 0, 1, &[(1, 3)])];
        g
    }

    #[test]
    fn kge_kinds_need_a_method() {
        assert!(Task::build(&graph(), ModelKind::TransH, None, None).is_err());
        assert!(Task::build(&graph(), ModelKind::FormerGnn, Some(Method::Hyper), None).is_err());
    }

    #[test]
    fn every_method_passes_the_audit() {
        let g = graph();
        for m in Method::ALL {
            let t = Task::build(&g, ModelKind::ComplEx, Some(m), None).unwrap();
            let audit = t.audit_leakage(&g).unwrap();
            assert_eq!(audit.foreign, 0, "{m:?}");
            assert_eq!(t.eval_queries(Split::Test).len(), 2);
            for q in t.eval.iter().flatten() {
                assert!(t.filter.answers(&q.query).contains(&q.query.answer));
            }
        }
        let t = Task::build(&g, ModelKind::FormerGnn, None, None).unwrap();
        let audit = t.audit_leakage(&g).unwrap();
        assert_eq!(audit.foreign, 0);
        // the test fact shares its main triple with a training fact
        assert_eq!(audit.heldout_targets_seen, 1);
    }

    #[test]
    fn injected_heldout_edge_is_flagged() {
        let g = graph();
        let mut t = Task::build(&g, ModelKind::Gnn, Some(Method::Direct), None).unwrap();
        t.graph_edges.push(g.valid[0].main_triple());
        assert_eq!(t.audit_leakage(&g).unwrap().foreign, 1);
    }

    #[test]
    fn reify_queries_go_through_the_hub() {
        let g = graph();
        let t = Task::build(&g, ModelKind::TransH, Some(Method::Reify), None).unwrap();
        let q = &t.eval_queries(Split::Valid)[0];
        assert_eq!(t.entities.label(q.query.anchor), "_:fact/valid/0");
        assert_eq!(t.relations.label(q.query.relation), REIFY_OBJECT);
        assert_eq!(q.query.answer, EntityId(3));
    }

    #[test]
    fn truncation_counts_facts() {
        let t = Task::build(&graph(), ModelKind::FormerGnn, None, Some(0)).unwrap();
        assert_eq!(t.truncated_facts, 3);
        assert!(t.train_queries.iter().all(|q| q.qualifiers.is_empty()));
    }
}
