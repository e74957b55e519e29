//! Seeded optimization of every model kind.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HkgError, Result};
use crate::evaluation::{self, EvalOptions};
use crate::model::{EntityId, HyperGraph, Split};
use crate::models::{
    ComplEx, Dropout, FormerGnn, FormerGnnConfig, GnnGraph, GnnModel, LinkPredictor, LossKind, ModelKind, ParamStore,
    TransH,
};
use crate::par::Mode;
use crate::task::{LeakageAudit, Task};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dim: usize,
    /// Message-passing layers (GNN and graph encoder).
    pub layers: usize,
    pub heads: usize,
    pub qi_layers: usize,
    pub decoder_layers: usize,
    pub ffn_mult: usize,
    /// Qualifier pairs per fact; longer lists are truncated with a warning.
    /// Defaults to the dataset maximum.
    pub max_qualifiers: Option<usize>,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub margin: f64,
    pub negatives: usize,
    /// Epochs between validation checks.
    pub eval_every: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dim: 64,
            layers: 2,
            heads: 4,
            qi_layers: 2,
            decoder_layers: 2,
            ffn_mult: 2,
            max_qualifiers: None,
            dropout: 0.0,
            label_smoothing: 0.1,
            margin: 1.0,
            negatives: 8,
            eval_every: 1,
            patience: 20,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| HkgError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("dim", self.dim),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
            ("negatives", self.negatives),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("eval_batch_size", self.eval_batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(HkgError::Config(format!("`{name}` must be positive")));
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
            ("margin", self.margin),
        ];
        if let Some((name, _)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(HkgError::Config(format!("`{name}` must be positive and finite")));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(HkgError::Config("Adam betas must be below 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(HkgError::Config("dropout and label_smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn loss_for(&self, kind: ModelKind) -> LossKind {
        match kind {
            ModelKind::TransH => LossKind::Margin {
                margin: self.margin,
                negatives: self.negatives,
            },
            _ => LossKind::SoftmaxCe {
                label_smoothing: self.label_smoothing,
            },
        }
    }

    pub fn former_config(&self, max_qualifiers: usize) -> FormerGnnConfig {
        FormerGnnConfig {
            max_qualifiers,
            heads: self.heads,
            qi_layers: self.qi_layers,
            decoder_layers: self.decoder_layers,
            gnn_layers: self.layers,
            ffn_mult: self.ffn_mult,
        }
    }
}

/// `k` entities drawn uniformly from `0..n_entities` without the true answer.
pub fn negative_sample(answer: EntityId, k: usize, n_entities: usize, rng: &mut ChaCha8Rng) -> Result<Vec<EntityId>> {
    if n_entities <= 1 {
        return Err(HkgError::Config(format!(
            "negative sampling needs at least two entities, got {n_entities}"
        )));
    }
    if k == 0 {
        return Err(HkgError::Config("negative sample size must be at least 1".into()));
    }
    Ok((0..k)
        .map(|_| {
            let x = rng.gen_range(0..n_entities as u32 - 1);
            EntityId(if x >= answer.0 { x + 1 } else { x })
        })
        .collect())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Builds a freshly initialized model for `task`.
pub fn build_model(task: &Task, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Box<dyn LinkPredictor>> {
    let dims = task.dims(cfg.dim);
    let graph = || GnnGraph::new(&task.graph_edges, dims.n_entities, dims.n_relations);
    Ok(match task.kind {
        ModelKind::TransH => Box::new(TransH::new(dims, rng)),
        ModelKind::ComplEx => Box::new(ComplEx::new(dims, rng)?),
        ModelKind::Gnn => {
            if cfg.layers == 0 {
                return Err(HkgError::Config("gnn needs at least one layer".into()));
            }
            Box::new(GnnModel::new(dims, cfg.layers, graph(), rng))
        }
        ModelKind::FormerGnn => {
            let max_q = task_max_qualifiers(task, cfg);
            Box::new(FormerGnn::new(dims, cfg.former_config(max_q), graph(), rng)?)
        }
    })
}

/// Rebuilds a model around stored parameters.
pub fn restore_model(task: &Task, cfg: &TrainConfig, params: ParamStore) -> Result<Box<dyn LinkPredictor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = build_model(task, cfg, &mut rng)?;
    if model.params().names() != params.names() {
        return Err(HkgError::Config("checkpoint parameters do not match the model layout".into()));
    }
    model.params_mut().replace(params.tensors().to_vec())?;
    Ok(model)
}

fn task_max_qualifiers(task: &Task, cfg: &TrainConfig) -> usize {
    cfg.max_qualifiers.unwrap_or_else(|| {
        task.eval
            .iter()
            .flatten()
            .map(|q| q.query.qualifiers.len())
            .chain(task.train_queries.iter().map(|q| q.qualifiers.len()))
            .max()
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mrr: Option<f64>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub model: Box<dyn LinkPredictor>,
    pub trace: Vec<EpochRecord>,
    /// 0 when the initialization was kept.
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    pub stopped_early: bool,
    pub audit: LeakageAudit,
    /// Training queries whose anchor has no edge in the message-passing graph.
    pub gt_fallbacks: usize,
}

/// Writes `epoch,train_loss,valid_mrr,seconds`.
pub fn write_trace_csv(trace: &[EpochRecord], out: &mut dyn std::io::Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,valid_mrr,seconds")?;
    for r in trace {
        let mrr = r.valid_mrr.map(|m| m.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{:.6}", r.epoch, r.train_loss, mrr, r.seconds)?;
    }
    Ok(())
}

pub struct Trainer<'a> {
    pub graph: &'a HyperGraph,
    pub task: &'a Task,
    pub cfg: &'a TrainConfig,
    pub mode: Mode,
    /// Called after every epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

impl Trainer<'_> {
    pub fn run(self) -> Result<TrainOutcome> {
        let Trainer {
            graph,
            task,
            cfg,
            mode,
            mut on_epoch,
        } = self;
        cfg.validate()?;
        let audit = task.audit_leakage(graph)?;
        if audit.foreign > 0 {
            return Err(HkgError::Config(format!(
                "{} training edges or queries do not come from the training split",
                audit.foreign
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = build_model(task, cfg, &mut rng)?;
        let loss_kind = cfg.loss_for(task.kind);
        let mut adam = Adam::new(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
        let n_entities = model.dims().n_entities;
        let gt_fallbacks = match task.kind {
            ModelKind::FormerGnn | ModelKind::Gnn => {
                let g = GnnGraph::new(&task.graph_edges, n_entities, task.n_relations());
                task.train_queries
                    .iter()
                    .filter(|q| !g.has_edges(q.anchor.0 as usize))
                    .count()
            }
            _ => 0,
        };

        let valid = task.eval_queries(Split::Valid);
        let opts = EvalOptions {
            n_ranked: task.n_answer_entities,
            batch_size: cfg.eval_batch_size,
            mode,
        };
        let mut best: Option<(f64, ParamStore, usize)> = None;
        let mut since_best = 0;
        let mut stopped_early = false;
        let mut trace = Vec::with_capacity(cfg.epochs);
        let mut order: Vec<usize> = (0..task.train_queries.len()).collect();

        for epoch in 1..=cfg.epochs {
            let start = Instant::now();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
                let queries: Vec<_> = idx.iter().map(|&i| task.train_queries[i].clone()).collect();
                let negatives = match loss_kind {
                    LossKind::Margin { negatives, .. } => queries
                        .iter()
                        .map(|q| negative_sample(q.answer, negatives, n_entities, &mut rng))
                        .collect::<Result<Vec<_>>>()?,
                    LossKind::SoftmaxCe { .. } => Vec::new(),
                };
                let tape = Tape::new();
                let vars = model.params().load(&tape);
                let dropout = (cfg.dropout > 0.0).then_some(Dropout {
                    rng: &mut rng,
                    p: cfg.dropout,
                });
                let loss = model.loss(&tape, &vars, &queries, &negatives, loss_kind, dropout)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    log::error!("non-finite loss {value} at epoch {epoch}, batch {b}");
                    return Err(HkgError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        loss: value,
                    });
                }
                let mut grads = tape.backward(loss)?;
                let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
                adam.step(model.params_mut().tensors_mut(), &grads);
                total += value;
                batches += 1;
            }
            let train_loss = total / batches.max(1) as f64;
            let valid_mrr = if !valid.is_empty() && epoch % cfg.eval_every == 0 {
                Some(evaluation::evaluate(model.as_ref(), valid, &task.filter, opts)?.average.mrr)
            } else {
                None
            };
            let record = EpochRecord {
                epoch,
                train_loss,
                valid_mrr,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!("epoch {epoch}: loss {train_loss:.6} valid mrr {valid_mrr:?}");
            if let Some(f) = on_epoch.as_mut() {
                f(&record);
            }
            trace.push(record);
            if let Some(mrr) = valid_mrr {
                if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                    best = Some((mrr, model.params().clone(), epoch));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }

        let (best_epoch, best_valid_mrr) = match best {
            Some((mrr, params, epoch)) => {
                model.params_mut().replace(params.tensors().to_vec())?;
                (epoch, Some(mrr))
            }
            None => (trace.last().map_or(0, |r| r.epoch), None),
        };
        Ok(TrainOutcome {
            model,
            trace,
            best_epoch,
            best_valid_mrr,
            stopped_early,
            audit,
            gt_fallbacks,
        })
    }
}
