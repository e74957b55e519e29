use rand_chacha::ChaCha8Rng;

use super::{Dropout, LinkPredictor, LossKind, ModelDims, ModelKind, ParamStore, Query};
use super::params::Init;
use crate::error::{HkgError, Result};
use crate::model::{EntityId, RelationId};
use crate::tensor::{Tape, Tensor, Var};

const ENTITY: usize = 0;
const TRANSLATION: usize = 1;
const NORMAL: usize = 2;

/// Translation on relation-specific hyperplanes:
/// `score = -|| P(h_s) + d_r - P(h_o) ||` with `P(x) = x - <w_r, x> w_r`, `w_r` unit length.
#[derive(Debug, Clone)]
pub struct TransH {
    dims: ModelDims,
    params: ParamStore,
}

impl TransH {
    pub fn new(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let mut init = Init { rng };
        let mut params = ParamStore::new();
        params.push("entity", init.embedding(dims.n_entities, dims.dim));
        params.push("relation.translation", init.embedding(dims.relation_rows(), dims.dim));
        params.push("relation.normal", init.embedding(dims.relation_rows(), dims.dim));
        TransH { dims, params }
    }

    pub fn from_params(dims: ModelDims, params: ParamStore) -> Self {
        TransH { dims, params }
    }

    /// Score of one triple, computed directly from the stored tensors.
    pub fn score_triple(&self, s: EntityId, r: RelationId, o: EntityId) -> f64 {
        let ent = &self.params.tensors()[ENTITY];
        let d_r = self.params.tensors()[TRANSLATION].row(r.0 as usize);
        let w = unit(self.params.tensors()[NORMAL].row(r.0 as usize));
        let ps = project(ent.row(s.0 as usize), &w);
        -distance(&ps, d_r, ent.row(o.0 as usize), &w)
    }

    /// Distances `||P(h_s) + d_r - P(h_o)||` for aligned index lists, recorded on `tape`.
    fn distances(&self, tape: &Tape, p: &[Var], s: &[usize], r: &[usize], o: &[usize]) -> Result<Var> {
        let hs = tape.gather(p[ENTITY], s)?;
        let ho = tape.gather(p[ENTITY], o)?;
        let dr = tape.gather(p[TRANSLATION], r)?;
        let w_raw = tape.gather(p[NORMAL], r)?;
        let sq = tape.mul(w_raw, w_raw)?;
        let norm = tape.sum_last(sq)?;
        let norm = tape.sqrt(norm);
        let inv = tape.recip(norm);
        let w = tape.scale_rows(w_raw, inv)?;
        let proj = |x: Var| -> Result<Var> {
            let xw = tape.mul(x, w)?;
            let dot = tape.sum_last(xw)?;
            let along = tape.scale_rows(w, dot)?;
            Ok(tape.sub(x, along)?)
        };
        let ps = proj(hs)?;
        let po = proj(ho)?;
        let t = tape.add(ps, dr)?;
        let diff = tape.sub(t, po)?;
        let sq = tape.mul(diff, diff)?;
        let ss = tape.sum_last(sq)?;
        Ok(tape.sqrt(ss))
    }
}

fn unit(w: &[f64]) -> Vec<f64> {
    let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter().map(|v| v / n).collect()
}

fn project(x: &[f64], w: &[f64]) -> Vec<f64> {
    let dot: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    x.iter().zip(w).map(|(a, b)| a - dot * b).collect()
}

fn distance(ps_plus: &[f64], d_r: &[f64], o: &[f64], w: &[f64]) -> f64 {
    let dot: f64 = o.iter().zip(w).map(|(a, b)| a * b).sum();
    ps_plus
        .iter()
        .zip(d_r)
        .zip(o.iter().zip(w))
        .map(|((p, d), (x, wv))| {
            let v = p + d - (x - dot * wv);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

impl LinkPredictor for TransH {
    fn kind(&self) -> ModelKind {
        ModelKind::TransH
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

    fn forward(&self, tape: &Tape, p: &[Var], queries: &[Query], _dropout: Option<Dropout<'_>>) -> Result<Var> {
        let n = self.dims.n_candidates;
        let mut s = Vec::with_capacity(queries.len() * n);
        let mut r = Vec::with_capacity(queries.len() * n);
        let mut o = Vec::with_capacity(queries.len() * n);
        for q in queries {
            for c in 0..n {
                s.push(q.anchor.0 as usize);
                r.push(q.relation.0 as usize);
                o.push(c);
            }
        }
        let d = self.distances(tape, p, &s, &r, &o)?;
        let d = tape.reshape(d, &[queries.len(), n])?;
        Ok(tape.scale(d, -1.0))
    }

    fn score(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>> {
        let ent = &self.params.tensors()[ENTITY];
        Ok(queries
            .iter()
            .map(|q| {
                let d_r = self.params.tensors()[TRANSLATION].row(q.relation.0 as usize);
                let w = unit(self.params.tensors()[NORMAL].row(q.relation.0 as usize));
                let ps = project(ent.row(q.anchor.0 as usize), &w);
                (0..self.dims.n_candidates)
                    .map(|c| -distance(&ps, d_r, ent.row(c), &w))
                    .collect()
            })
            .collect())
    }

    fn loss(
        &self,
        tape: &Tape,
        p: &[Var],
        queries: &[Query],
        negatives: &[Vec<EntityId>],
        loss: LossKind,
        _dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        let LossKind::Margin { margin, .. } = loss else {
            return Err(HkgError::Config("transh is trained with a margin loss".into()));
        };
        let s: Vec<usize> = queries.iter().map(|q| q.anchor.0 as usize).collect();
        let r: Vec<usize> = queries.iter().map(|q| q.relation.0 as usize).collect();
        let o: Vec<usize> = queries.iter().map(|q| q.answer.0 as usize).collect();
        let pos = self.distances(tape, p, &s, &r, &o)?;

        let (mut pos_idx, mut ns, mut nr, mut no) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, (q, negs)) in queries.iter().zip(negatives).enumerate() {
            for n in negs {
                pos_idx.push(i);
                ns.push(q.anchor.0 as usize);
                nr.push(q.relation.0 as usize);
                no.push(n.0 as usize);
            }
        }
        if pos_idx.is_empty() {
            return Err(HkgError::Config("margin loss needs at least one negative per query".into()));
        }
        let neg = self.distances(tape, p, &ns, &nr, &no)?;
        let pos = tape.gather(pos, &pos_idx)?;
        let gap = tape.sub(pos, neg)?;
        let m = tape.constant(Tensor::filled(&[pos_idx.len()], margin));
        let hinge = tape.add(gap, m)?;
        let hinge = tape.relu(hinge);
        Ok(tape.mean(hinge))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dims() -> ModelDims {
        ModelDims {
            n_entities: 6,
            n_candidates: 6,
            n_relations: 2,
            dim: 4,
        }
    }

    /// Independent re-derivation with explicit hyperplane algebra.
    fn reference(h_s: &[f64], d_r: &[f64], w_raw: &[f64], h_o: &[f64]) -> f64 {
        let norm = w_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w: Vec<f64> = w_raw.iter().map(|x| x / norm).collect();
        let ws: f64 = (0..w.len()).map(|i| w[i] * h_s[i]).sum();
        let wo: f64 = (0..w.len()).map(|i| w[i] * h_o[i]).sum();
        let mut acc = 0.0;
        for i in 0..w.len() {
            let e = (h_s[i] - ws * w[i]) + d_r[i] - (h_o[i] - wo * w[i]);
            acc += e * e;
        }
        -acc.sqrt()
    }

    #[test]
    fn matches_reference_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = TransH::new(dims(), &mut rng);
        for _ in 0..20 {
            let (s, r, o) = (rng.gen_range(0..6), rng.gen_range(0..5), rng.gen_range(0..6));
            let t = m.params.tensors();
            let want = reference(t[ENTITY].row(s), t[TRANSLATION].row(r), t[NORMAL].row(r), t[ENTITY].row(o));
            let got = m.score_triple(EntityId(s as u32), RelationId(r as u32), EntityId(o as u32));
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_projections_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = TransH::new(dims(), &mut rng);
        // h_o = h_s + c * w projects onto the same point; zero translation
        let w = m.params.tensors()[NORMAL].row(0).to_vec();
        let hs = m.params.tensors()[ENTITY].row(0).to_vec();
        let ho: Vec<f64> = hs.iter().zip(&w).map(|(a, b)| a + 0.7 * b).collect();
        m.params.tensors_mut()[ENTITY].row_mut(1).copy_from_slice(&ho);
        m.params.tensors_mut()[TRANSLATION].row_mut(0).fill(0.0);
        let s = m.score_triple(EntityId(0), RelationId(0), EntityId(1));
        assert!(s.abs() < 1e-12, "{s}");
    }

    #[test]
    fn tape_and_direct_scores_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = TransH::new(dims(), &mut rng);
        let q = Query {
            anchor: EntityId(2),
            relation: RelationId(3),
            qualifiers: vec![],
            answer: EntityId(0),
        };
        let direct = m.score(std::slice::from_ref(&q)).unwrap();
        let tape = Tape::new();
        let vars = m.params.constants(&tape);
        let out = m.forward(&tape, &vars, &[q], None).unwrap();
        let taped = tape.value(out).data().to_vec();
        for (a, b) in direct[0].iter().zip(&taped) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_scaling_keeps_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = TransH::new(dims(), &mut rng);
        let mut scaled = m.clone();
        for name in ["entity", "relation.translation"] {
            scaled.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v *= 3.5);
        }
        let q = Query {
            anchor: EntityId(1),
            relation: RelationId(0),
            qualifiers: vec![],
            answer: EntityId(0),
        };
        let a = m.score(std::slice::from_ref(&q)).unwrap().remove(0);
        let b = scaled.score(&[q]).unwrap().remove(0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x * 3.5 - y).abs() < 1e-12);
        }
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[j].total_cmp(&v[i]));
            idx
        };
        assert_eq!(order(&a), order(&b));
    }
}
