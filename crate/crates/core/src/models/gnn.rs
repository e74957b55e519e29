use rand_chacha::ChaCha8Rng;

use super::params::Init;
use super::{apply_dropout, Dropout, LinkPredictor, ModelDims, ModelKind, ParamStore, Query};
use crate::error::Result;
use crate::model::Triple;
use crate::tensor::{Tape, Var};

/// Message-passing structure: every triple contributes a forward message to its
/// object and an inverse message to its subject; every node also sends itself a
/// self-loop message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnnGraph {
    pub n_nodes: usize,
    fwd: Buckets,
    inv: Buckets,
    self_rel: usize,
    has_edges: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Buckets {
    src: Vec<usize>,
    rel: Vec<usize>,
    dst: Vec<usize>,
}

impl GnnGraph {
    /// `n_relations` is the forward relation count; inverse ids are offset by it.
    pub fn new(triples: &[Triple], n_nodes: usize, n_relations: usize) -> Self {
        let mut fwd = Buckets::default();
        let mut inv = Buckets::default();
        let mut has_edges = vec![false; n_nodes];
        for t in triples {
            let (s, r, o) = (t.subject.0 as usize, t.relation.0 as usize, t.object.0 as usize);
            fwd.src.push(s);
            fwd.rel.push(r);
            fwd.dst.push(o);
            inv.src.push(o);
            inv.rel.push(r + n_relations);
            inv.dst.push(s);
            has_edges[s] = true;
            has_edges[o] = true;
        }
        GnnGraph {
            n_nodes,
            fwd,
            inv,
            self_rel: 2 * n_relations,
            has_edges,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.fwd.src.len()
    }

    /// False for nodes that take part in no triple.
    pub fn has_edges(&self, node: usize) -> bool {
        self.has_edges.get(node).copied().unwrap_or(false)
    }
}

/// Relational neighbour aggregation with subtraction composition:
///
/// `h'_v = relu( (mean_fwd W_f (h_u - h_r) + mean_inv W_i (h_u - h_r) + W_s (h_v - h_self)) / 3 )`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnnEncoder {
    /// Parameter indices `[forward, inverse, self]` per layer.
    layers: Vec<[usize; 3]>,
}

impl GnnEncoder {
    /// Registers `n_layers` layers of `dim x dim` weights in `params`.
    pub fn register(params: &mut ParamStore, prefix: &str, n_layers: usize, dim: usize, init: &mut Init<'_>) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                ["forward", "inverse", "self"].map(|dir| params.push(format!("{prefix}.{l}.{dir}"), init.xavier(dim, dim)))
            })
            .collect();
        GnnEncoder { layers }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Returns the final-layer node matrix `[n_nodes, d]`.
    pub fn encode(
        &self,
        tape: &Tape,
        p: &[Var],
        entities: Var,
        relations: Var,
        graph: &GnnGraph,
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<Var> {
        let n = graph.n_nodes;
        let self_idx = vec![graph.self_rel; n];
        let mut h = entities;
        for &[wf, wi, ws] in &self.layers {
            // W (h_u - h_r) = h_u W - h_r W, so project nodes and relations once.
            let bucket = |b: &Buckets, w: usize, h: Var| -> Result<Var> {
                let hw = tape.matmul(h, p[w])?;
                let rw = tape.matmul(relations, p[w])?;
                let from = tape.gather(hw, &b.src)?;
                let rel = tape.gather(rw, &b.rel)?;
                let msg = tape.sub(from, rel)?;
                Ok(tape.segment_mean(msg, &b.dst, n)?)
            };
            let fwd = bucket(&graph.fwd, wf, h)?;
            let inv = bucket(&graph.inv, wi, h)?;
            let hw = tape.matmul(h, p[ws])?;
            let rw = tape.matmul(relations, p[ws])?;
            let loop_rel = tape.gather(rw, &self_idx)?;
            let own = tape.sub(hw, loop_rel)?;
            let sum = tape.add(fwd, inv)?;
            let sum = tape.add(sum, own)?;
            let sum = tape.scale(sum, 1.0 / 3.0);
            h = tape.relu(sum);
            h = apply_dropout(tape, h, dropout)?;
        }
        Ok(h)
    }
}

const ENTITY: usize = 0;
const RELATION: usize = 1;

/// Neighbour-GNN encoder over a (decomposed) training graph with a bilinear
/// diagonal decoder: `score(a, r, c) = <h_a, h_r, h_c>` on encoded entities.
#[derive(Debug, Clone)]
pub struct GnnModel {
    dims: ModelDims,
    params: ParamStore,
    encoder: GnnEncoder,
    graph: GnnGraph,
}

impl GnnModel {
    pub fn new(dims: ModelDims, layers: usize, graph: GnnGraph, rng: &mut ChaCha8Rng) -> Self {
        let mut init = Init { rng };
        let mut params = ParamStore::new();
        params.push("entity", init.embedding(dims.n_entities, dims.dim));
        params.push("relation", init.embedding(dims.relation_rows(), dims.dim));
        let encoder = GnnEncoder::register(&mut params, "gnn", layers, dims.dim, &mut init);
        GnnModel {
            dims,
            params,
            encoder,
            graph,
        }
    }

    pub fn graph(&self) -> &GnnGraph {
        &self.graph
    }

    /// Final-layer entity matrix, without gradient tracking.
    pub fn encode_entities(&self) -> Result<crate::tensor::Tensor> {
        let tape = Tape::new();
        let p = self.params.constants(&tape);
        let h = self.encoder.encode(&tape, &p, p[ENTITY], p[RELATION], &self.graph, &mut None)?;
        let out = tape.value(h).clone();
        Ok(out)
    }
}

impl LinkPredictor for GnnModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Gnn
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
        let h = self
            .encoder
            .encode(tape, p, p[ENTITY], p[RELATION], &self.graph, &mut dropout)?;
        let a: Vec<usize> = queries.iter().map(|q| q.anchor.0 as usize).collect();
        let r: Vec<usize> = queries.iter().map(|q| q.relation.0 as usize).collect();
        let ha = tape.gather(h, &a)?;
        let hr = tape.gather(p[RELATION], &r)?;
        let q = tape.mul(ha, hr)?;
        let cands = tape.slice_rows(h, 0, self.dims.n_candidates)?;
        let ct = tape.transpose(cands)?;
        Ok(tape.matmul(q, ct)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntityId, RelationId};
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn t(s: u32, r: u32, o: u32) -> Triple {
        Triple::new(EntityId(s), RelationId(r), EntityId(o))
    }

    fn setup(n: usize, layers: usize, triples: &[Triple], seed: u64) -> (ParamStore, GnnEncoder, GnnGraph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut params = ParamStore::new();
        params.push("entity", init.embedding(n, 4));
        params.push("relation", init.embedding(2 * 2 + 1, 4));
        let enc = GnnEncoder::register(&mut params, "gnn", layers, 4, &mut init);
        (params, enc, GnnGraph::new(triples, n, 2))
    }

    fn run(params: &ParamStore, enc: &GnnEncoder, g: &GnnGraph) -> Tensor {
        let tape = Tape::new();
        let p = params.constants(&tape);
        let h = enc.encode(&tape, &p, p[0], p[1], g, &mut None).unwrap();
        let v = tape.value(h).clone();
        v
    }

    #[test]
    fn zero_layers_is_identity() {
        let (params, enc, g) = setup(3, 0, &[t(0, 0, 1)], 1);
        assert_eq!(run(&params, &enc, &g), params.tensors()[0]);
    }

    #[test]
    fn single_edge_locality() {
        // b = 1 receives from a = 0 only; changing c = 2 must not move b
        let (mut params, enc, g) = setup(3, 1, &[t(0, 0, 1)], 2);
        let before = run(&params, &enc, &g);
        params.tensors_mut()[0].row_mut(2).fill(0.3);
        let after = run(&params, &enc, &g);
        assert_eq!(before.row(1), after.row(1));
        assert_ne!(before.row(2), after.row(2));
        params.tensors_mut()[0].row_mut(0).fill(0.3);
        let moved = run(&params, &enc, &g);
        assert_ne!(after.row(1), moved.row(1));
    }

    #[test]
    fn isolated_node_gets_self_message_only() {
        let (params, enc, g) = setup(3, 1, &[t(0, 0, 1)], 3);
        let h = run(&params, &enc, &g);
        let x = params.tensors()[0].row(2);
        let self_rel = params.tensors()[1].row(4);
        let w = params.get("gnn.0.self").unwrap();
        for j in 0..4 {
            let v: f64 = (0..4).map(|i| (x[i] - self_rel[i]) * w.data()[i * 4 + j]).sum::<f64>() / 3.0;
            assert!((h.row(2)[j] - v.max(0.0)).abs() < 1e-12);
        }
        assert!(!g.has_edges(2));
    }

    #[test]
    fn permuted_ids_permute_outputs() {
        let triples = [t(0, 0, 1), t(1, 1, 2), t(2, 0, 3), t(3, 1, 0), t(0, 1, 2)];
        let perm = [2u32, 0, 3, 1];
        let permuted: Vec<Triple> = triples
            .iter()
            .map(|x| t(perm[x.subject.0 as usize], x.relation.0, perm[x.object.0 as usize]))
            .collect();
        let (params, enc, g) = setup(4, 2, &triples, 4);
        let mut p2 = params.clone();
        for (old, &new) in perm.iter().enumerate() {
            let row = params.tensors()[0].row(old).to_vec();
            p2.tensors_mut()[0].row_mut(new as usize).copy_from_slice(&row);
        }
        let g2 = GnnGraph::new(&permuted, 4, 2);
        let a = run(&params, &enc, &g);
        let b = run(&p2, &enc, &g2);
        for (old, &new) in perm.iter().enumerate() {
            for (x, y) in a.row(old).iter().zip(b.row(new as usize)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
