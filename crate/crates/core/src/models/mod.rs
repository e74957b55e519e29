//! Link-prediction models.
//!
//! Every model answers *queries* `(anchor, relation, qualifiers) -> ?`. Subject
//! prediction is handled by inverse relations: a fact `(s, r, o, Q)` yields the
//! object query `(s, r, Q) -> o` and the mirrored query `(o, r⁻¹, Q) -> s`, with
//! `r⁻¹ = r + n_relations`.

mod complex;
mod formergnn;
mod gnn;
mod params;
mod transformer;
mod transh;

pub use complex::ComplEx;
pub use formergnn::{FormerGnn, FormerGnnConfig, TokenLayout, Tokens};
pub use gnn::{GnnEncoder, GnnGraph, GnnModel};
pub use params::{Init, ParamStore};
pub use transformer::{Transformer, TransformerConfig};
pub use transh::TransH;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HkgError, Result};
use crate::model::{EntityId, HyperFact, Qualifier, RelationId};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransH,
    ComplEx,
    Gnn,
    FormerGnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::TransH, ModelKind::ComplEx, ModelKind::Gnn, ModelKind::FormerGnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransH => "transh",
            ModelKind::ComplEx => "complex",
            ModelKind::Gnn => "gnn",
            ModelKind::FormerGnn => "formergnn",
        }
    }

    /// Models that read qualifiers directly instead of a decomposed graph.
    pub fn is_hyper_relational(self) -> bool {
        matches!(self, ModelKind::FormerGnn)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = HkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transh" => Ok(ModelKind::TransH),
            "complex" => Ok(ModelKind::ComplEx),
            "gnn" => Ok(ModelKind::Gnn),
            "formergnn" => Ok(ModelKind::FormerGnn),
            other => Err(HkgError::Config(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One link-prediction query with its true answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub anchor: EntityId,
    /// Relation id in model space (inverse relations included).
    pub relation: RelationId,
    /// Qualifiers sorted by (relation, entity).
    pub qualifiers: Vec<Qualifier>,
    pub answer: EntityId,
}

/// Which slot of the main triple a query predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Object,
    Subject,
}

impl Query {
    pub fn object(fact: &HyperFact) -> Self {
        Query {
            anchor: fact.subject,
            relation: fact.relation,
            qualifiers: fact.sorted_qualifiers(),
            answer: fact.object,
        }
    }

    /// `(o, r⁻¹, Q) -> s`.
    pub fn subject(fact: &HyperFact, n_relations: usize) -> Self {
        Query {
            anchor: fact.object,
            relation: inverse(fact.relation, n_relations),
            qualifiers: fact.sorted_qualifiers(),
            answer: fact.subject,
        }
    }

    pub fn both(fact: &HyperFact, n_relations: usize) -> [Self; 2] {
        [Query::object(fact), Query::subject(fact, n_relations)]
    }

    pub fn without_qualifiers(mut self) -> Self {
        self.qualifiers.clear();
        self
    }
}

pub fn inverse(r: RelationId, n_relations: usize) -> RelationId {
    RelationId(r.0 + n_relations as u32)
}

/// Vocabulary sizes shared by all models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Rows of the entity table (synthesized entities included).
    pub n_entities: usize,
    /// Entities that may appear as answers: ids `0..n_candidates`.
    pub n_candidates: usize,
    /// Relations before inverses are added.
    pub n_relations: usize,
    pub dim: usize,
}

impl ModelDims {
    /// Relation rows: forward, inverse, self-loop.
    pub fn relation_rows(&self) -> usize {
        2 * self.n_relations + 1
    }

    pub fn self_loop(&self) -> RelationId {
        RelationId((2 * self.n_relations) as u32)
    }
}

/// Dropout masks are drawn from the caller's generator so runs replay exactly.
pub struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub p: f64,
}

impl Dropout<'_> {
    pub fn mask(&mut self, shape: &[usize]) -> Tensor {
        use rand::Rng;
        let keep = 1.0 - self.p;
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Tensor::new(shape, data).expect("shape from product")
    }
}

pub(crate) fn apply_dropout(tape: &Tape, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) if d.p > 0.0 => {
            let mask = d.mask(&tape.shape(x));
            Ok(tape.dropout(x, &mask)?)
        }
        _ => Ok(x),
    }
}

/// Loss applied on top of a model's candidate scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy over all candidates with label smoothing.
    SoftmaxCe { label_smoothing: f64 },
    /// `mean(relu(margin + d(pos) - d(neg)))` over `negatives` sampled objects.
    Margin { margin: f64, negatives: usize },
}

/// Common interface of all link-prediction models.
pub trait LinkPredictor: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn dims(&self) -> ModelDims;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Candidate scores `[queries, n_candidates]` recorded on `tape`.
    fn forward(&self, tape: &Tape, params: &[Var], queries: &[Query], dropout: Option<Dropout<'_>>) -> Result<Var>;

    /// Scores without recording gradients; one row per query.
    fn score(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let vars = self.params().constants(&tape);
        let out = self.forward(&tape, &vars, queries, None)?;
        let value = tape.value(out);
        let n = self.dims().n_candidates;
        Ok(value.data().chunks(n).map(<[f64]>::to_vec).collect())
    }

    /// Training loss for a batch. `negatives` holds one list of sampled wrong
    /// answers per query and is only read by margin losses.
    fn loss(
        &self,
        tape: &Tape,
        params: &[Var],
        queries: &[Query],
        negatives: &[Vec<EntityId>],
        loss: LossKind,
        dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        match loss {
            LossKind::SoftmaxCe { label_smoothing } => {
                let scores = self.forward(tape, params, queries, dropout)?;
                softmax_cross_entropy(tape, scores, queries, self.dims().n_candidates, label_smoothing)
            }
            LossKind::Margin { .. } => {
                let _ = negatives;
                Err(HkgError::Config(format!("{} does not support a margin loss", self.kind())))
            }
        }
    }
}

/// `-mean_q sum_c t_qc log softmax(scores_q)_c` with `t = (1-eps) onehot + eps/N`.
pub fn softmax_cross_entropy(tape: &Tape, scores: Var, queries: &[Query], n: usize, eps: f64) -> Result<Var> {
    let b = queries.len();
    let mut target = vec![eps / n as f64; b * n];
    for (i, q) in queries.iter().enumerate() {
        target[i * n + q.answer.0 as usize] += 1.0 - eps;
    }
    let target = tape.constant(Tensor::new(&[b, n], target)?);
    let logp = tape.log_softmax(scores);
    let weighted = tape.mul(logp, target)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / b.max(1) as f64))
}

pub(crate) fn check_dim_even(dim: usize) -> Result<()> {
    if dim % 2 == 1 {
        return Err(HkgError::Config(format!("ComplEx needs an even embedding dimension, got {dim}")));
    }
    Ok(())
}
