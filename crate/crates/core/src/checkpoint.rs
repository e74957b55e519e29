//! Single-file JSON checkpoints. Floats are written with shortest round-trip
//! formatting, so saving and loading reproduces every parameter bit for bit.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decompose::Method;
use crate::error::{HkgError, Result};
use crate::ingest::{read_split, Format, LoadReport};
use crate::model::{EntityId, HyperFact, HyperGraph, RelationId, Split, Vocab};
use crate::models::{LinkPredictor, ModelKind, ParamStore};
use crate::task::Task;
use crate::training::{restore_model, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabDigests {
    pub entities: String,
    pub relations: String,
}

impl VocabDigests {
    pub fn of(entities: &Vocab<EntityId>, relations: &Vocab<RelationId>) -> Self {
        VocabDigests {
            entities: entities.digest(),
            relations: relations.digest(),
        }
    }

    fn check(&self, data: &VocabDigests) -> Result<()> {
        for (c, d) in [(&self.entities, &data.entities), (&self.relations, &data.relations)] {
            if c != d {
                return Err(HkgError::VocabMismatch {
                    checkpoint: c.clone(),
                    data: d.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tool_version: String,
    pub kind: ModelKind,
    pub method: Option<Method>,
    pub config: TrainConfig,
    pub source_entities: Vocab<EntityId>,
    pub source_relations: Vocab<RelationId>,
    pub source_digests: VocabDigests,
    /// Digests of the model-space vocabularies (synthesized labels included).
    pub model_digests: VocabDigests,
    /// Training and validation facts, kept for rebuilding the graph and the filter.
    pub train: Vec<HyperFact>,
    pub valid: Vec<HyperFact>,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    pub params: ParamStore,
}

/// A checkpoint joined with an evaluation split.
pub struct Restored {
    pub graph: HyperGraph,
    pub task: Task,
    pub model: Box<dyn LinkPredictor>,
    pub load_report: LoadReport,
}

impl Checkpoint {
    pub fn new(
        graph: &HyperGraph,
        task: &Task,
        config: &TrainConfig,
        model: &dyn LinkPredictor,
        best_epoch: usize,
        best_valid_mrr: Option<f64>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: task.kind,
            method: task.method,
            config: config.clone(),
            source_entities: graph.entities.clone(),
            source_relations: graph.relations.clone(),
            source_digests: VocabDigests::of(&graph.entities, &graph.relations),
            model_digests: VocabDigests::of(&task.entities, &task.relations),
            train: graph.train.clone(),
            valid: graph.valid.clone(),
            best_epoch,
            best_valid_mrr,
            params: model.params().clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(HkgError::Config(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        ckpt.source_entities.reindex();
        ckpt.source_relations.reindex();
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Reads the evaluation split against the stored vocabularies and rebuilds
    /// the model. Any label unknown to the checkpoint changes the vocabulary
    /// digest and is rejected.
    pub fn restore<R: BufRead>(&self, test: R, format: Format) -> Result<Restored> {
        let mut graph = HyperGraph {
            entities: self.source_entities.clone(),
            relations: self.source_relations.clone(),
            train: self.train.clone(),
            valid: self.valid.clone(),
            test: Vec::new(),
        };
        let mut load_report = LoadReport::default();
        read_split(test, format, &mut graph, Split::Test, &mut load_report)?;
        self.source_digests
            .check(&VocabDigests::of(&graph.entities, &graph.relations))?;
        let task = Task::build(&graph, self.kind, self.method, self.config.max_qualifiers)?;
        self.model_digests
            .check(&VocabDigests::of(&task.entities, &task.relations))?;
        let model = restore_model(&task, &self.config, self.params.clone())?;
        Ok(Restored {
            graph,
            task,
            model,
            load_report,
        })
    }
}
