use serde::{Deserialize, Serialize};

use super::params::Init;
use super::{apply_dropout, Dropout, ParamStore};
use crate::error::{HkgError, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width of the feed-forward sublayer as a multiple of `dim`.
    pub ffn_mult: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return Err(HkgError::Config("transformer dim, heads and ffn_mult must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(HkgError::Config(format!(
                "head count {} does not divide dimension {}",
                self.heads, self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    ln1_gain: usize,
    ln1_bias: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_gain: usize,
    ln2_bias: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Pre-norm encoder stack: `x += MHA(LN(x))`, `x += FFN(LN(x))` per layer.
/// Keys flagged invalid by the padding mask receive zero attention weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transformer {
    cfg: TransformerConfig,
    layers: Vec<Layer>,
}

const LN_EPS: f64 = 1e-5;

impl Transformer {
    pub fn register(params: &mut ParamStore, prefix: &str, cfg: TransformerConfig, init: &mut Init<'_>) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let h = d * cfg.ffn_mult;
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut push = |name: &str, t: Tensor| params.push(format!("{prefix}.{l}.{name}"), t);
                Layer {
                    ln1_gain: push("ln1.gain", Tensor::filled(&[d], 1.0)),
                    ln1_bias: push("ln1.bias", Tensor::zeros(&[d])),
                    wq: push("attn.q.weight", init.xavier(d, d)),
                    bq: push("attn.q.bias", Tensor::zeros(&[d])),
                    wk: push("attn.k.weight", init.xavier(d, d)),
                    bk: push("attn.k.bias", Tensor::zeros(&[d])),
                    wv: push("attn.v.weight", init.xavier(d, d)),
                    bv: push("attn.v.bias", Tensor::zeros(&[d])),
                    wo: push("attn.out.weight", init.xavier(d, d)),
                    bo: push("attn.out.bias", Tensor::zeros(&[d])),
                    ln2_gain: push("ln2.gain", Tensor::filled(&[d], 1.0)),
                    ln2_bias: push("ln2.bias", Tensor::zeros(&[d])),
                    w1: push("ffn.in.weight", init.xavier(d, h)),
                    b1: push("ffn.in.bias", Tensor::zeros(&[h])),
                    w2: push("ffn.out.weight", init.xavier(h, d)),
                    b2: push("ffn.out.bias", Tensor::zeros(&[d])),
                }
            })
            .collect();
        Ok(Transformer { cfg, layers })
    }

    pub fn config(&self) -> TransformerConfig {
        self.cfg
    }

    /// `x` is `[batch, tokens, dim]`; `valid[b * tokens + t]` marks real tokens.
    pub fn forward(
        &self,
        tape: &Tape,
        p: &[Var],
        x: Var,
        valid: &[bool],
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<Var> {
        let shape = tape.shape(x);
        let &[b, t, d] = shape.as_slice() else {
            return Err(HkgError::Config(format!("transformer input must be rank 3, got {shape:?}")));
        };
        if d != self.cfg.dim || valid.len() != b * t {
            return Err(HkgError::Config(format!(
                "transformer input {shape:?} does not match dim {} / mask length {}",
                self.cfg.dim,
                valid.len()
            )));
        }
        let heads = self.cfg.heads;
        let dh = d / heads;
        let mut mask = Vec::with_capacity(b * heads * t * t);
        for bi in 0..b {
            let keys = &valid[bi * t..(bi + 1) * t];
            for _ in 0..heads * t {
                mask.extend(keys.iter().map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY }));
            }
        }
        let mask = tape.constant(Tensor::new(&[b * heads, t, t], mask)?);
        let split = |v: Var| -> Result<Var> {
            let v = tape.reshape(v, &[b, t, heads, dh])?;
            let v = tape.permute(v, &[0, 2, 1, 3])?;
            Ok(tape.reshape(v, &[b * heads, t, dh])?)
        };
        let linear = |x: Var, w: usize, bias: usize| -> Result<Var> {
            let y = tape.matmul(x, p[w])?;
            Ok(tape.add_bias(y, p[bias])?)
        };

        let mut h = tape.reshape(x, &[b * t, d])?;
        for l in &self.layers {
            let n = tape.layer_norm(h, p[l.ln1_gain], p[l.ln1_bias], LN_EPS)?;
            let q = split(linear(n, l.wq, l.bq)?)?;
            let k = split(linear(n, l.wk, l.bk)?)?;
            let v = split(linear(n, l.wv, l.bv)?)?;
            let kt = tape.transpose(k)?;
            let scores = tape.batch_matmul(q, kt)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let scores = tape.add(scores, mask)?;
            let att = tape.softmax(scores);
            let ctx = tape.batch_matmul(att, v)?;
            let ctx = tape.reshape(ctx, &[b, heads, t, dh])?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, &[b * t, d])?;
            let out = linear(ctx, l.wo, l.bo)?;
            let out = apply_dropout(tape, out, dropout)?;
            h = tape.add(h, out)?;

            let n = tape.layer_norm(h, p[l.ln2_gain], p[l.ln2_bias], LN_EPS)?;
            let f = linear(n, l.w1, l.b1)?;
            let f = tape.relu(f);
            let f = linear(f, l.w2, l.b2)?;
            let f = apply_dropout(tape, f, dropout)?;
            h = tape.add(h, f)?;
        }
        Ok(tape.reshape(h, &[b, t, d])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(layers: usize, seed: u64) -> (ParamStore, Transformer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let cfg = TransformerConfig {
            dim: 8,
            heads: 2,
            layers,
            ffn_mult: 2,
        };
        let tr = Transformer::register(&mut params, "t", cfg, &mut Init { rng: &mut rng }).unwrap();
        (params, tr)
    }

    fn input(b: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[b, t, 8], (0..b * t * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn run(params: &ParamStore, tr: &Transformer, x: &Tensor, valid: &[bool]) -> Tensor {
        let tape = Tape::new();
        let p = params.constants(&tape);
        let xv = tape.constant(x.clone());
        let out = tr.forward(&tape, &p, xv, valid, &mut None).unwrap();
        let v = tape.value(out).clone();
        v
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = TransformerConfig {
            dim: 6,
            heads: 4,
            layers: 1,
            ffn_mult: 1,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_layers_pass_through() {
        let (params, tr) = build(0, 1);
        let x = input(2, 3, 2);
        assert_eq!(run(&params, &tr, &x, &[true; 6]), x);
    }

    #[test]
    fn padded_keys_do_not_influence_valid_rows() {
        let (params, tr) = build(2, 3);
        let mut x = input(1, 5, 4);
        let valid = [true, true, true, false, false];
        let a = run(&params, &tr, &x, &valid);
        for v in &mut x.data_mut()[3 * 8..] {
            *v = 42.0;
        }
        let b = run(&params, &tr, &x, &valid);
        assert_eq!(&a.data()[..3 * 8], &b.data()[..3 * 8]);
    }

    #[test]
    fn token_permutation_is_equivariant() {
        let (params, tr) = build(2, 5);
        let x = input(1, 4, 6);
        let mut y = x.clone();
        let (r1, r2) = (x.row(0)[..8].to_vec(), x.data()[3 * 8..].to_vec());
        y.data_mut()[..8].copy_from_slice(&r2);
        y.data_mut()[3 * 8..].copy_from_slice(&r1);
        let a = run(&params, &tr, &x, &[true; 4]);
        let b = run(&params, &tr, &y, &[true; 4]);
        for j in 0..8 {
            assert!((a.data()[j] - b.data()[3 * 8 + j]).abs() < 1e-12);
            assert!((a.data()[8 + j] - b.data()[8 + j]).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_output_projections_give_identity() {
        let (mut params, tr) = build(2, 7);
        for (name, t) in params.names().to_vec().iter().zip(params.tensors_mut()) {
            if name.contains("out.") {
                t.data_mut().fill(0.0);
            }
        }
        let x = input(2, 3, 8);
        assert_eq!(run(&params, &tr, &x, &[true; 6]), x);
    }
}
