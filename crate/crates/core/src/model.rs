//! In-memory representation of hyper-relational knowledge graphs.
//!
//! A statement is a main triple `(s, r, o)` refined by an ordered list of
//! qualifier pairs `(qr, qe)`. Entities and relations are interned into dense
//! integer ids; the order in which labels are first seen fixes the ids, so the
//! same input files always produce the same numbering.

use std::collections::HashMap;
use std::fmt;
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HkgError, Result};

/// Dense index types backed by a vocabulary.
pub trait DenseId: Copy + Eq + Ord + std::hash::Hash + fmt::Debug {
    fn from_index(index: usize) -> Self;
    fn index(self) -> usize;
}

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl DenseId for $name {
            #[inline]
            fn from_index(index: usize) -> Self {
                $name(u32::try_from(index).expect("id space exhausted"))
            }
            #[inline]
            fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(
    /// Index into the entity vocabulary.
    EntityId
);
dense_id!(
    /// Index into the relation vocabulary.
    RelationId
);

/// Bijective label <-> id map. Labels added after the source data was read
/// (composite relations, pseudo entities, ...) carry the `synthesized` flag.
#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Vocab<I: DenseId> {
    labels: Vec<String>,
    synthesized: Vec<bool>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    #[serde(skip)]
    _id: PhantomData<I>,
}

impl<I: DenseId> Default for Vocab<I> {
    fn default() -> Self {
        Vocab {
            labels: Vec::new(),
            synthesized: Vec::new(),
            index: HashMap::new(),
            _id: PhantomData,
        }
    }
}

impl<I: DenseId> fmt::Debug for Vocab<I> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocab").field("len", &self.labels.len()).finish()
    }
}

impl<I: DenseId> PartialEq for Vocab<I> {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.synthesized == other.synthesized
    }
}

impl<I: DenseId> Vocab<I> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a vocabulary from labels in id order.
    pub fn from_labels<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut vocab = Self::new();
        for label in labels {
            let label = label.into();
            let before = vocab.len();
            vocab.intern(&label)?;
            if vocab.len() == before {
                return Err(HkgError::Parse {
                    line: before + 1,
                    message: format!("duplicate vocabulary label `{label}`"),
                });
            }
        }
        Ok(vocab)
    }

    /// Returns the id of `label`, appending it if unseen.
    pub fn intern(&mut self, label: &str) -> Result<I> {
        self.intern_flagged(label, false)
    }

    /// Interns a label created by a transformation rather than read from data.
    pub fn intern_synthesized(&mut self, label: &str) -> Result<I> {
        self.intern_flagged(label, true)
    }

    fn intern_flagged(&mut self, label: &str, synthesized: bool) -> Result<I> {
        if label.is_empty() {
            return Err(HkgError::EmptyLabel);
        }
        if let Some(&id) = self.index.get(label) {
            return Ok(I::from_index(id as usize));
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.synthesized.push(synthesized);
        self.index.insert(label.to_owned(), id as u32);
        Ok(I::from_index(id))
    }

    pub fn get(&self, label: &str) -> Option<I> {
        self.index.get(label).map(|&i| I::from_index(i as usize))
    }

    pub fn label(&self, id: I) -> &str {
        &self.labels[id.index()]
    }

    pub fn is_synthesized(&self, id: I) -> bool {
        self.synthesized[id.index()]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, id: I) -> bool {
        id.index() < self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (I, &str)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (I::from_index(i), l.as_str()))
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        if self.synthesized.len() != self.labels.len() {
            self.synthesized.resize(self.labels.len(), false);
        }
    }

    /// Content hash over labels in id order (hex SHA-256).
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for label in &self.labels {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Qualifier {
    pub relation: RelationId,
    pub entity: EntityId,
}

impl Qualifier {
    pub fn new(relation: RelationId, entity: EntityId) -> Self {
        Qualifier { relation, entity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

/// A main triple plus its qualifiers, in source order.
///
/// Derived equality is source-order sensitive; use [`HyperFact::canonical`]
/// to compare statements as the qualifier *multiset* they denote.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperFact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub qualifiers: Vec<Qualifier>,
}

/// Order-insensitive key of a fact: qualifiers sorted by (relation, entity).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalFact {
    pub main: Triple,
    pub qualifiers: Vec<Qualifier>,
}

impl HyperFact {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        HyperFact {
            subject,
            relation,
            object,
            qualifiers: Vec::new(),
        }
    }

    pub fn with_qualifiers(mut self, qualifiers: Vec<Qualifier>) -> Self {
        self.qualifiers = qualifiers;
        self
    }

    /// Number of qualifier pairs.
    pub fn arity(&self) -> usize {
        self.qualifiers.len()
    }

    pub fn main_triple(&self) -> Triple {
        Triple::new(self.subject, self.relation, self.object)
    }

    pub fn sorted_qualifiers(&self) -> Vec<Qualifier> {
        let mut q = self.qualifiers.clone();
        q.sort_unstable();
        q
    }

    pub fn canonical(&self) -> CanonicalFact {
        CanonicalFact {
            main: self.main_triple(),
            qualifiers: self.sorted_qualifiers(),
        }
    }

    pub fn canonical_eq(&self, other: &HyperFact) -> bool {
        self.main_triple() == other.main_triple()
            && self.qualifiers.len() == other.qualifiers.len()
            && self.sorted_qualifiers() == other.sorted_qualifiers()
    }

    /// True if the same (qr, qe) pair occurs more than once.
    pub fn has_duplicate_qualifiers(&self) -> bool {
        let q = self.sorted_qualifiers();
        q.windows(2).any(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Vocabularies plus the three fact splits.
#[derive(Debug, Clone, Default)]
pub struct HyperGraph {
    pub entities: Vocab<EntityId>,
    pub relations: Vocab<RelationId>,
    pub train: Vec<HyperFact>,
    pub valid: Vec<HyperFact>,
    pub test: Vec<HyperFact>,
}

impl HyperGraph {
    pub fn split(&self, split: Split) -> &[HyperFact] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<HyperFact> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn n_facts(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn all_facts(&self) -> impl Iterator<Item = (Split, &HyperFact)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |f| (s, f)))
    }

    /// Checks that every id is in-vocabulary and no split repeats a statement.
    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            let mut seen = std::collections::HashSet::new();
            for (i, fact) in self.split(split).iter().enumerate() {
                let ents = std::iter::once(fact.subject)
                    .chain(std::iter::once(fact.object))
                    .chain(fact.qualifiers.iter().map(|q| q.entity));
                let rels =
                    std::iter::once(fact.relation).chain(fact.qualifiers.iter().map(|q| q.relation));
                let bad_ent = ents.into_iter().any(|e| !self.entities.contains(e));
                let bad_rel = rels.into_iter().any(|r| !self.relations.contains(r));
                if bad_ent || bad_rel {
                    return Err(HkgError::Parse {
                        line: i + 1,
                        message: format!("{split} fact has out-of-vocabulary id"),
                    });
                }
                if !seen.insert(fact.canonical()) {
                    return Err(HkgError::Parse {
                        line: i + 1,
                        message: format!("duplicate fact in {split} split"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Number of canonical statements shared between two splits.
    pub fn overlap(&self, a: Split, b: Split) -> usize {
        let left: std::collections::HashSet<_> =
            self.split(a).iter().map(HyperFact::canonical).collect();
        self.split(b)
            .iter()
            .filter(|f| left.contains(&f.canonical()))
            .count()
    }

    pub fn max_arity(&self) -> usize {
        self.all_facts().map(|(_, f)| f.arity()).max().unwrap_or(0)
    }
}
