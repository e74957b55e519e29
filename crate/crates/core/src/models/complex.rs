use rand_chacha::ChaCha8Rng;

use super::params::Init;
use super::{check_dim_even, Dropout, LinkPredictor, ModelDims, ModelKind, ParamStore, Query};
use crate::error::Result;
use crate::model::{EntityId, RelationId};
use crate::tensor::{Tape, Var};

const ENTITY: usize = 0;
const RELATION: usize = 1;

/// Trilinear complex scoring `Re(<h_s, h_r, conj(h_o)>)`. Each embedding row
/// stores the real half followed by the imaginary half.
#[derive(Debug, Clone)]
pub struct ComplEx {
    dims: ModelDims,
    params: ParamStore,
}

impl ComplEx {
    pub fn new(dims: ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        check_dim_even(dims.dim)?;
        let mut init = Init { rng };
        let mut params = ParamStore::new();
        params.push("entity", init.embedding(dims.n_entities, dims.dim));
        params.push("relation", init.embedding(dims.relation_rows(), dims.dim));
        Ok(ComplEx { dims, params })
    }

    pub fn from_params(dims: ModelDims, params: ParamStore) -> Result<Self> {
        check_dim_even(dims.dim)?;
        Ok(ComplEx { dims, params })
    }

    pub fn score_triple(&self, s: EntityId, r: RelationId, o: EntityId) -> f64 {
        let ent = &self.params.tensors()[ENTITY];
        let rel = &self.params.tensors()[RELATION];
        let (hs, hr, ho) = (ent.row(s.0 as usize), rel.row(r.0 as usize), ent.row(o.0 as usize));
        let k = self.dims.dim / 2;
        (0..k)
            .map(|i| {
                let (sr, si) = (hs[i], hs[k + i]);
                let (rr, ri) = (hr[i], hr[k + i]);
                let (or, oi) = (ho[i], ho[k + i]);
                (sr * rr - si * ri) * or + (sr * ri + si * rr) * oi
            })
            .sum()
    }
}

impl LinkPredictor for ComplEx {
    fn kind(&self) -> ModelKind {
        ModelKind::ComplEx
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
        let k = self.dims.dim / 2;
        let s: Vec<usize> = queries.iter().map(|q| q.anchor.0 as usize).collect();
        let r: Vec<usize> = queries.iter().map(|q| q.relation.0 as usize).collect();
        let hs = tape.gather(p[ENTITY], &s)?;
        let hr = tape.gather(p[RELATION], &r)?;
        let (sr, si) = (tape.slice_last(hs, 0, k)?, tape.slice_last(hs, k, 2 * k)?);
        let (rr, ri) = (tape.slice_last(hr, 0, k)?, tape.slice_last(hr, k, 2 * k)?);
        let a = tape.mul(sr, rr)?;
        let b = tape.mul(si, ri)?;
        let re = tape.sub(a, b)?;
        let c = tape.mul(sr, ri)?;
        let d = tape.mul(si, rr)?;
        let im = tape.add(c, d)?;
        let q = tape.concat(&[re, im], 1)?;
        let cands = tape.slice_rows(p[ENTITY], 0, self.dims.n_candidates)?;
        let ct = tape.transpose(cands)?;
        Ok(tape.matmul(q, ct)?)
    }
}
