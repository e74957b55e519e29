use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gnn::{GnnEncoder, GnnGraph};
use super::params::Init;
use super::transformer::{Transformer, TransformerConfig};
use super::{Dropout, LinkPredictor, ModelDims, ModelKind, ParamStore, Query};
use crate::error::{HkgError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Token roles; every qualifier pair shares roles 3 and 4, so the sequence
/// carries no information about pair order.
pub const ROLE_SUBJECT: usize = 0;
pub const ROLE_RELATION: usize = 1;
pub const ROLE_MASK: usize = 2;
pub const ROLE_QUAL_RELATION: usize = 3;
pub const ROLE_QUAL_ENTITY: usize = 4;
const N_ROLES: usize = 5;

/// Fixed sequence layout `[s, r, MSK, qr_1, qe_1, ..., pad]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub max_qualifiers: usize,
}

/// One query as token rows of the joint `[entities; relations]` table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens {
    pub rows: Vec<usize>,
    pub roles: Vec<usize>,
    pub valid: Vec<bool>,
}

impl TokenLayout {
    pub const MASK_POSITION: usize = 2;

    pub fn len(&self) -> usize {
        3 + 2 * self.max_qualifiers
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `entity_rows` is the entity-table height; relation rows follow it in the
    /// joint table. `mask` and `pad_*` are row ids in their own tables.
    pub fn encode(&self, q: &Query, entity_rows: usize, mask: usize, pad_entity: usize, pad_relation: usize) -> Result<Tokens> {
        if q.qualifiers.len() > self.max_qualifiers {
            return Err(HkgError::ArityTooLarge {
                arity: q.qualifiers.len(),
                limit: self.max_qualifiers,
            });
        }
        let rel = |r: usize| entity_rows + r;
        let n = self.len();
        let mut rows = Vec::with_capacity(n);
        let mut roles = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        rows.extend([q.anchor.0 as usize, rel(q.relation.0 as usize), mask]);
        roles.extend([ROLE_SUBJECT, ROLE_RELATION, ROLE_MASK]);
        valid.extend([true; 3]);
        let mut quals = q.qualifiers.clone();
        quals.sort_unstable();
        for i in 0..self.max_qualifiers {
            match quals.get(i) {
                Some(qual) => {
                    rows.extend([rel(qual.relation.0 as usize), qual.entity.0 as usize]);
                    valid.extend([true, true]);
                }
                None => {
                    rows.extend([rel(pad_relation), pad_entity]);
                    valid.extend([false, false]);
                }
            }
            roles.extend([ROLE_QUAL_RELATION, ROLE_QUAL_ENTITY]);
        }
        Ok(Tokens { rows, roles, valid })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormerGnnConfig {
    pub max_qualifiers: usize,
    pub heads: usize,
    pub qi_layers: usize,
    pub decoder_layers: usize,
    pub gnn_layers: usize,
    pub ffn_mult: usize,
}

impl Default for FormerGnnConfig {
    fn default() -> Self {
        FormerGnnConfig {
            max_qualifiers: 4,
            heads: 4,
            qi_layers: 2,
            decoder_layers: 2,
            gnn_layers: 2,
            ffn_mult: 2,
        }
    }
}

const ENTITY: usize = 0;
const RELATION: usize = 1;
const ROLE: usize = 2;

/// Qualifier integrator over the raw fact, graph encoder over the pruned
/// training graph, and a decoder over both whose `[MSK]` row is scored
/// against every entity.
#[derive(Debug, Clone)]
pub struct FormerGnn {
    dims: ModelDims,
    cfg: FormerGnnConfig,
    params: ParamStore,
    qi: Transformer,
    ge: GnnEncoder,
    align_weight: usize,
    align_bias: usize,
    decoder: Transformer,
    graph: GnnGraph,
}

impl FormerGnn {
    /// `graph` must be built over the prune decomposition of the training split.
    pub fn new(dims: ModelDims, cfg: FormerGnnConfig, graph: GnnGraph, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.gnn_layers == 0 {
            return Err(HkgError::Config("graph encoder needs at least one layer".into()));
        }
        if dims.n_candidates != dims.n_entities {
            return Err(HkgError::Config("formergnn scores every entity; candidates must equal entities".into()));
        }
        if graph.n_nodes != dims.n_entities {
            return Err(HkgError::Config(format!(
                "graph has {} nodes but the model has {} entities",
                graph.n_nodes, dims.n_entities
            )));
        }
        let d = dims.dim;
        let tcfg = |layers| TransformerConfig {
            dim: d,
            heads: cfg.heads,
            layers,
            ffn_mult: cfg.ffn_mult,
        };
        let mut init = Init { rng };
        let mut params = ParamStore::new();
        params.push("entity", init.embedding(dims.n_entities + 2, d));
        params.push("relation", init.embedding(dims.relation_rows() + 1, d));
        params.push("role", init.embedding(N_ROLES, d));
        let qi = Transformer::register(&mut params, "qi", tcfg(cfg.qi_layers), &mut init)?;
        let ge = GnnEncoder::register(&mut params, "ge", cfg.gnn_layers, d, &mut init);
        let align_weight = params.push("align.weight", init.xavier(d, d));
        let align_bias = params.push("align.bias", Tensor::zeros(&[d]));
        let decoder = Transformer::register(&mut params, "decoder", tcfg(cfg.decoder_layers), &mut init)?;
        Ok(FormerGnn {
            dims,
            cfg,
            params,
            qi,
            ge,
            align_weight,
            align_bias,
            decoder,
            graph,
        })
    }

    pub fn config(&self) -> FormerGnnConfig {
        self.cfg
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            max_qualifiers: self.cfg.max_qualifiers,
        }
    }

    pub fn mask_row(&self) -> usize {
        self.dims.n_entities
    }

    fn pad_entity(&self) -> usize {
        self.dims.n_entities + 1
    }

    fn pad_relation(&self) -> usize {
        self.dims.relation_rows()
    }

    pub fn graph(&self) -> &GnnGraph {
        &self.graph
    }

    /// Queries whose anchor has no edge in the pruned graph and therefore uses
    /// its raw embedding row as graph-topology embedding.
    pub fn gt_fallbacks(&self, queries: &[Query]) -> usize {
        queries.iter().filter(|q| !self.graph.has_edges(q.anchor.0 as usize)).count()
    }

    fn tokens(&self, queries: &[Query]) -> Result<Tokens> {
        let layout = self.layout();
        let rows = self.dims.n_entities + 2;
        let mut all = Tokens {
            rows: Vec::new(),
            roles: Vec::new(),
            valid: Vec::new(),
        };
        for q in queries {
            let t = layout.encode(q, rows, self.mask_row(), self.pad_entity(), self.pad_relation())?;
            all.rows.extend(t.rows);
            all.roles.extend(t.roles);
            all.valid.extend(t.valid);
        }
        Ok(all)
    }

    /// Qualifier-integrator output `[batch, tokens, dim]`.
    pub fn integrate(&self, tape: &Tape, p: &[Var], queries: &[Query], dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
        let tokens = self.tokens(queries)?;
        let (b, t, d) = (queries.len(), self.layout().len(), self.dims.dim);
        let joint = tape.concat(&[p[ENTITY], p[RELATION]], 0)?;
        let x = tape.gather(joint, &tokens.rows)?;
        let roles = tape.gather(p[ROLE], &tokens.roles)?;
        let x = tape.add(x, roles)?;
        let x = tape.reshape(x, &[b, t, d])?;
        self.qi.forward(tape, p, x, &tokens.valid, dropout)
    }

    /// Aligned graph-topology embeddings `[batch, dim]` of each query anchor.
    pub fn graph_topology(&self, tape: &Tape, p: &[Var], queries: &[Query], dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
        let n = self.dims.n_entities;
        let raw = tape.slice_rows(p[ENTITY], 0, n)?;
        let h = self.ge.encode(tape, p, raw, p[RELATION], &self.graph, dropout)?;
        let table = tape.concat(&[h, raw], 0)?;
        let idx: Vec<usize> = queries
            .iter()
            .map(|q| {
                let a = q.anchor.0 as usize;
                if self.graph.has_edges(a) {
                    a
                } else {
                    n + a
                }
            })
            .collect();
        let gt = tape.gather(table, &idx)?;
        let gt = tape.matmul(gt, p[self.align_weight])?;
        Ok(tape.add_bias(gt, p[self.align_bias])?)
    }
}

impl LinkPredictor for FormerGnn {
    fn kind(&self) -> ModelKind {
        ModelKind::FormerGnn
    }

    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, tape: &Tape, p: &[Var], queries: &[Query], mut dropout: Option<Dropout<'_>>) -> Result<Var> {
        let (b, t, d) = (queries.len(), self.layout().len(), self.dims.dim);
        let tokens = self.tokens(queries)?;
        let qi = self.integrate(tape, p, queries, &mut dropout)?;
        let gt = self.graph_topology(tape, p, queries, &mut dropout)?;
        let gt = tape.reshape(gt, &[b, 1, d])?;
        let cat = tape.concat(&[qi, gt], 1)?;
        let mut valid = Vec::with_capacity(b * (t + 1));
        for chunk in tokens.valid.chunks(t) {
            valid.extend_from_slice(chunk);
            valid.push(true);
        }
        let out = self.decoder.forward(tape, p, cat, &valid, &mut dropout)?;
        let out = tape.reshape(out, &[b * (t + 1), d])?;
        let msk: Vec<usize> = (0..b).map(|i| i * (t + 1) + TokenLayout::MASK_POSITION).collect();
        let msk = tape.gather(out, &msk)?;
        let v = tape.slice_rows(p[ENTITY], 0, self.dims.n_entities)?;
        let vt = tape.transpose(v)?;
        Ok(tape.matmul(msk, vt)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntityId, Qualifier, RelationId, Triple};
    use rand::{Rng, SeedableRng};

    const N: usize = 12;
    const R: usize = 3;

    fn triples() -> Vec<Triple> {
        [(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 0, 4), (5, 1, 6), (6, 2, 0), (7, 0, 8)]
            .iter()
            .map(|&(s, r, o)| Triple::new(EntityId(s), RelationId(r), EntityId(o)))
            .collect()
    }

    fn model(max_qualifiers: usize, seed: u64) -> FormerGnn {
        let dims = ModelDims {
            n_entities: N,
            n_candidates: N,
            n_relations: R,
            dim: 8,
        };
        let cfg = FormerGnnConfig {
            max_qualifiers,
            heads: 2,
            qi_layers: 1,
            decoder_layers: 2,
            gnn_layers: 1,
            ffn_mult: 2,
        };
        FormerGnn::new(dims, cfg, GnnGraph::new(&triples(), N, R), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_query(rng: &mut ChaCha8Rng, n_quals: usize) -> Query {
        Query {
            anchor: EntityId(rng.gen_range(0..N as u32)),
            relation: RelationId(rng.gen_range(0..2 * R as u32)),
            qualifiers: (0..n_quals)
                .map(|_| Qualifier::new(RelationId(rng.gen_range(0..R as u32)), EntityId(rng.gen_range(0..N as u32))))
                .collect(),
            answer: EntityId(0),
        }
    }

    fn qi_rows(m: &FormerGnn, queries: &[Query]) -> Tensor {
        let tape = Tape::new();
        let p = m.params.constants(&tape);
        let out = m.integrate(&tape, &p, queries, &mut None).unwrap();
        let v = tape.value(out).clone();
        v
    }

    #[test]
    fn scores_cover_every_entity() {
        let m = model(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let qs: Vec<Query> = (0..3).map(|_| random_query(&mut rng, 2)).collect();
        let s = m.score(&qs).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|row| row.len() == N));
    }

    #[test]
    fn arity_above_limit_rejected() {
        let m = model(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = m.score(&[random_query(&mut rng, 2)]).unwrap_err();
        assert!(matches!(err, HkgError::ArityTooLarge { arity: 2, limit: 1 }));
    }

    #[test]
    fn qualifier_order_is_bit_identical() {
        let m = model(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_query(&mut rng, 3);
        let base = m.score(std::slice::from_ref(&q)).unwrap();
        let mut swapped = q.clone();
        swapped.qualifiers.swap(0, 2);
        assert_eq!(base, m.score(&[swapped]).unwrap());
    }

    #[test]
    fn extra_padding_pair_is_bit_identical() {
        let short = model(2, 6);
        let mut long = model(3, 6);
        // same seed, same registration order: only the layout differs
        *long.params_mut() = short.params().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let qs: Vec<Query> = (0..4).map(|i| random_query(&mut rng, i % 3)).collect();
        assert_eq!(short.score(&qs).unwrap(), long.score(&qs).unwrap());
    }

    #[test]
    fn zero_qualifiers_depend_only_on_head_tokens() {
        let mut m = model(2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_query(&mut rng, 0);
        let before = qi_rows(&m, std::slice::from_ref(&q));
        let pad_e = m.pad_entity();
        let pad_r = m.pad_relation();
        m.params.tensors_mut()[ENTITY].row_mut(pad_e).fill(5.0);
        m.params.tensors_mut()[RELATION].row_mut(pad_r).fill(-5.0);
        let after = qi_rows(&m, &[q]);
        assert_eq!(&before.data()[..3 * 8], &after.data()[..3 * 8]);
    }

    #[test]
    fn pass_through_decoder_scores_mask_row() {
        let mut m = model(2, 10);
        let names = m.params.names().to_vec();
        for (name, t) in names.iter().zip(m.params.tensors_mut()) {
            if name.starts_with("decoder.") && name.contains("out.") {
                t.data_mut().fill(0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let qs: Vec<Query> = (0..3).map(|i| random_query(&mut rng, i)).collect();
        let qi = qi_rows(&m, &qs);
        let ent = &m.params.tensors()[ENTITY];
        let t = m.layout().len();
        let scores = m.score(&qs).unwrap();
        for (b, row) in scores.iter().enumerate() {
            let msk = &qi.data()[(b * t + TokenLayout::MASK_POSITION) * 8..][..8];
            for (c, &got) in row.iter().enumerate() {
                let want: f64 = msk.iter().zip(ent.row(c)).map(|(x, y)| x * y).sum();
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_anchor_falls_back_to_raw_row() {
        let m = model(1, 12);
        let q = Query {
            anchor: EntityId(10),
            relation: RelationId(0),
            qualifiers: vec![],
            answer: EntityId(0),
        };
        assert_eq!(m.gt_fallbacks(std::slice::from_ref(&q)), 1);
        let tape = Tape::new();
        let p = m.params.constants(&tape);
        let gt = m.graph_topology(&tape, &p, std::slice::from_ref(&q), &mut None).unwrap();
        let gt = tape.value(gt).clone();
        let raw = m.params.tensors()[ENTITY].row(10);
        let w = m.params.get("align.weight").unwrap();
        for j in 0..8 {
            let want: f64 = (0..8).map(|i| raw[i] * w.data()[i * 8 + j]).sum();
            assert!((gt.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_embedding_ignores_entities_beyond_receptive_field() {
        // one GNN layer: entity 4 is two hops from 2 (2-3-4) and cannot reach it
        let mut m = model(1, 13);
        let q = Query {
            anchor: EntityId(2),
            relation: RelationId(1),
            qualifiers: vec![],
            answer: EntityId(0),
        };
        let gt = |m: &FormerGnn| {
            let tape = Tape::new();
            let p = m.params.constants(&tape);
            let v = m.graph_topology(&tape, &p, std::slice::from_ref(&q), &mut None).unwrap();
            let out = tape.value(v).clone();
            out
        };
        let before = gt(&m);
        m.params.tensors_mut()[ENTITY].row_mut(4).fill(3.0);
        assert_eq!(before, gt(&m));
        m.params.tensors_mut()[ENTITY].row_mut(3).fill(3.0);
        assert_ne!(before, gt(&m));
    }
}
