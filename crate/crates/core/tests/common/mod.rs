//! Helpers shared by integration tests.
#![allow(dead_code)]

use hkg_core::decompose::Method;
use hkg_core::model::{EntityId, HyperGraph};
use hkg_core::models::{LinkPredictor, LossKind, ModelKind, Query};
use hkg_core::synthetic::{generate, SyntheticConfig};
use hkg_core::tensor::Tape;
use hkg_core::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn memorization_graph() -> HyperGraph {
    generate(&SyntheticConfig::memorization(), &mut ChaCha8Rng::seed_from_u64(3))
}

/// Decomposition used for plain-triple models on the memorization fixture.
pub fn fixture_method(kind: ModelKind) -> Option<Method> {
    (!kind.is_hyper_relational()).then_some(Method::Prune)
}

pub fn fixture_config(kind: ModelKind) -> TrainConfig {
    let base = TrainConfig {
        seed: 11,
        epochs: 500,
        batch_size: 64,
        learning_rate: 0.01,
        dim: 32,
        layers: 1,
        heads: 4,
        qi_layers: 1,
        decoder_layers: 1,
        ..TrainConfig::default()
    };
    match kind {
        ModelKind::TransH => TrainConfig {
            learning_rate: 0.03,
            negatives: 32,
            ..base
        },
        _ => base,
    }
}

pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordCheck {
    /// `|a - n| / max(|a|, |n|, 1e-6)`
    pub fn rel_err(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-6)
    }
}

fn loss_value(model: &dyn LinkPredictor, queries: &[Query], negatives: &[Vec<EntityId>], loss: LossKind) -> f64 {
    let tape = Tape::new();
    let vars = model.params().constants(&tape);
    let l = model.loss(&tape, &vars, queries, negatives, loss, None).unwrap();
    let v = tape.value(l).item();
    v
}

/// Compares tape gradients with central differences (step `h`) at `n` random
/// coordinates among those the loss depends on.
pub fn finite_difference_check(
    model: &mut dyn LinkPredictor,
    queries: &[Query],
    negatives: &[Vec<EntityId>],
    loss: LossKind,
    n: usize,
    h: f64,
    seed: u64,
) -> Vec<CoordCheck> {
    let tape = Tape::new();
    let vars = model.params().load(&tape);
    let l = model.loss(&tape, &vars, queries, negatives, loss, None).unwrap();
    let mut grads = tape.backward(l).unwrap();
    let grads: Vec<Vec<f64>> = vars.iter().map(|&v| grads.take(v).into_data()).collect();
    drop(tape);

    let reached: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(p, g)| g.iter().enumerate().filter(|(_, v)| v.abs() > 1e-9).map(move |(i, _)| (p, i)))
        .collect();
    assert!(!reached.is_empty(), "loss has no gradient");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (p, i) = reached[rng.gen_range(0..reached.len())];
            let orig = model.params().tensors()[p].data()[i];
            model.params_mut().tensors_mut()[p].data_mut()[i] = orig + h;
            let up = loss_value(model, queries, negatives, loss);
            model.params_mut().tensors_mut()[p].data_mut()[i] = orig - h;
            let down = loss_value(model, queries, negatives, loss);
            model.params_mut().tensors_mut()[p].data_mut()[i] = orig;
            CoordCheck {
                param: model.params().names()[p].clone(),
                index: i,
                analytic: grads[p][i],
                numeric: (up - down) / (2.0 * h),
            }
        })
        .collect()
}
