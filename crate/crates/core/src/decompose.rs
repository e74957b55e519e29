//! Conversion of hyper-relational statements into plain triples.
//!
//! | method | emitted per fact `(s, r, o, [(qr_i, qe_i)])`                               |
//! |--------|-----------------------------------------------------------------------------|
//! | prune  | `(s, r, o)`                                                                 |
//! | direct | prune + `(s, qr_i, qe_i)`                                                   |
//! | hyper  | direct + `(qe_i, r||qr_i, o)`                                               |
//! | reify  | `(pe, sub, s)`, `(pe, obj, o)`, `(pe, pre, e_r)`, `(pe, qr_i, qe_i)`        |
//!
//! `pe` is a fresh pseudo entity per statement and `e_r` the main relation
//! promoted to an entity. Reification does not keep the main triple itself.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{HkgError, Result};
use crate::model::{EntityId, HyperFact, HyperGraph, RelationId, Split, Triple, Vocab};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Prune,
    Direct,
    Hyper,
    Reify,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Prune, Method::Direct, Method::Hyper, Method::Reify];

    pub fn name(self) -> &'static str {
        match self {
            Method::Prune => "prune",
            Method::Direct => "direct",
            Method::Hyper => "hyper",
            Method::Reify => "reify",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prune" => Ok(Method::Prune),
            "direct" => Ok(Method::Direct),
            "hyper" => Ok(Method::Hyper),
            "reify" => Ok(Method::Reify),
            other => Err(HkgError::Config(format!("unknown decomposition method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const COMPOSITE_SEPARATOR: &str = "||";
pub const REIFY_SUBJECT: &str = "_reify:subject";
pub const REIFY_OBJECT: &str = "_reify:object";
pub const REIFY_PREDICATE: &str = "_reify:predicate";

/// Escapes `\` and `|` so that `||` only ever appears as the separator.
fn escape_component(label: &str) -> std::borrow::Cow<'_, str> {
    if !label.contains(['|', '\\']) {
        return label.into();
    }
    let mut out = String::with_capacity(label.len() + 4);
    for c in label.chars() {
        if c == '|' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.into()
}

/// Label of the composite relation `r||qr`.
pub fn composite_label(relation: &str, qualifier_relation: &str) -> String {
    format!(
        "{}{COMPOSITE_SEPARATOR}{}",
        escape_component(relation),
        escape_component(qualifier_relation)
    )
}

/// Inverse of [`composite_label`]; `None` if the label is not a composite.
pub fn split_composite_label(label: &str) -> Option<(String, String)> {
    let mut parts = vec![String::new()];
    let mut chars = label.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => parts.last_mut()?.push(chars.next()?),
            '|' if chars.peek() == Some(&'|') => {
                chars.next();
                parts.push(String::new());
            }
            '|' => return None,
            c => parts.last_mut()?.push(c),
        }
    }
    match <[String; 2]>::try_from(parts) {
        Ok([a, b]) => Some((a, b)),
        Err(_) => None,
    }
}

pub fn pseudo_entity_label(split: Split, fact_index: usize) -> String {
    format!("_:fact/{}/{fact_index}", split.name())
}

pub fn promoted_relation_label(relation: &str) -> String {
    format!("_rel:{relation}")
}

/// Main triple only.
pub fn decompose_prune(fact: &HyperFact) -> Vec<Triple> {
    vec![fact.main_triple()]
}

/// Main triple, then every qualifier attached to the subject, in source order.
pub fn decompose_direct(fact: &HyperFact) -> Vec<Triple> {
    let mut out = Vec::with_capacity(1 + fact.arity());
    out.push(fact.main_triple());
    out.extend(
        fact.qualifiers
            .iter()
            .map(|q| Triple::new(fact.subject, q.relation, q.entity)),
    );
    out
}

/// Direct triples plus `(qe_i, r||qr_i, o)` with globally interned composite relations.
pub fn decompose_hyper(fact: &HyperFact, relations: &mut Vocab<RelationId>) -> Result<Vec<Triple>> {
    let mut out = decompose_direct(fact);
    for q in &fact.qualifiers {
        let label = composite_label(relations.label(fact.relation), relations.label(q.relation));
        let composite = relations.intern_synthesized(&label)?;
        out.push(Triple::new(q.entity, composite, fact.object));
    }
    Ok(out)
}

/// Ids shared by all reified statements.
#[derive(Debug, Clone, Copy)]
pub struct ReifyRelations {
    pub subject: RelationId,
    pub object: RelationId,
    pub predicate: RelationId,
}

impl ReifyRelations {
    pub fn intern(relations: &mut Vocab<RelationId>) -> Result<Self> {
        Ok(ReifyRelations {
            subject: relations.intern_synthesized(REIFY_SUBJECT)?,
            object: relations.intern_synthesized(REIFY_OBJECT)?,
            predicate: relations.intern_synthesized(REIFY_PREDICATE)?,
        })
    }
}

/// Triples of a reified statement hub; `pseudo` must be fresh for this fact.
pub fn reify_with(fact: &HyperFact, pseudo: EntityId, promoted: EntityId, rel: ReifyRelations) -> Vec<Triple> {
    let mut out = Vec::with_capacity(3 + fact.arity());
    out.push(Triple::new(pseudo, rel.subject, fact.subject));
    out.push(Triple::new(pseudo, rel.object, fact.object));
    out.push(Triple::new(pseudo, rel.predicate, promoted));
    out.extend(fact.qualifiers.iter().map(|q| Triple::new(pseudo, q.relation, q.entity)));
    out
}

/// Reifies one statement, interning its pseudo entity under `pseudo_label`.
pub fn decompose_reify(
    fact: &HyperFact,
    pseudo_label: &str,
    entities: &mut Vocab<EntityId>,
    relations: &mut Vocab<RelationId>,
) -> Result<Vec<Triple>> {
    let rel = ReifyRelations::intern(relations)?;
    let before = entities.len();
    let pseudo = entities.intern_synthesized(pseudo_label)?;
    if entities.len() == before {
        return Err(HkgError::Config(format!("pseudo entity label `{pseudo_label}` already in use")));
    }
    let promoted = entities.intern_synthesized(&promoted_relation_label(relations.label(fact.relation)))?;
    Ok(reify_with(fact, pseudo, promoted, rel))
}

/// Emitted triples of one fact: `triples[start..start + len]` of its split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SplitTriples {
    /// All emitted triples, before deduplication, in fact order.
    pub triples: Vec<Triple>,
    /// One entry per source fact.
    pub provenance: Vec<Provenance>,
}

impl SplitTriples {
    /// Distinct triples in first-occurrence order.
    pub fn unique(&self) -> Vec<Triple> {
        let mut seen = HashSet::with_capacity(self.triples.len());
        self.triples.iter().copied().filter(|t| seen.insert(*t)).collect()
    }

    pub fn duplicates(&self) -> usize {
        self.triples.len() - self.triples.iter().collect::<HashSet<_>>().len()
    }

    pub fn fact_triples(&self, fact_index: usize) -> &[Triple] {
        let p = self.provenance[fact_index];
        &self.triples[p.start..p.start + p.len]
    }
}

/// A hyper-relational graph rewritten as triples.
#[derive(Debug, Clone)]
pub struct DecomposedGraph {
    pub method: Method,
    pub entities: Vocab<EntityId>,
    pub relations: Vocab<RelationId>,
    /// Entity/relation counts of the source graph; ids at or above are synthesized.
    pub n_source_entities: usize,
    pub n_source_relations: usize,
    pub train: SplitTriples,
    pub valid: SplitTriples,
    pub test: SplitTriples,
}

impl DecomposedGraph {
    pub fn split(&self, split: Split) -> &SplitTriples {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Deduplicated training edges. Only training facts contribute, so
    /// qualifier-derived triples of valid/test facts never reach a model.
    pub fn training_edges(&self) -> Vec<Triple> {
        self.train.unique()
    }

    pub fn dedup_counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.split(s).duplicates())
    }

    /// Writes `{train,valid,test}.tsv`, `provenance.tsv`, `entities.tsv`, `relations.tsv`.
    pub fn write_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for split in Split::ALL {
            let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{}.tsv", split.name())))?);
            for t in self.split(split).unique() {
                writeln!(
                    w,
                    "{}\t{}\t{}",
                    self.entities.label(t.subject),
                    self.relations.label(t.relation),
                    self.entities.label(t.object)
                )?;
            }
            w.flush()?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("provenance.tsv"))?);
        writeln!(w, "split\tfact\ttriple\tsubject\trelation\tobject")?;
        for split in Split::ALL {
            let st = self.split(split);
            for (fact, p) in st.provenance.iter().enumerate() {
                for i in p.start..p.start + p.len {
                    let t = st.triples[i];
                    writeln!(w, "{}\t{fact}\t{i}\t{}\t{}\t{}", split.name(), t.subject, t.relation, t.object)?;
                }
            }
        }
        w.flush()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("entities.tsv"))?);
        for (id, label) in self.entities.iter() {
            writeln!(w, "{id}\t{label}\t{}", u8::from(self.entities.is_synthesized(id)))?;
        }
        w.flush()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("relations.tsv"))?);
        for (id, label) in self.relations.iter() {
            writeln!(w, "{id}\t{label}\t{}", u8::from(self.relations.is_synthesized(id)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Applies `method` to every fact of every split.
///
/// Synthesized labels are interned in a sequential pre-pass (train, valid,
/// test; facts in order), so ids are deterministic; the per-fact rewrite then
/// runs in parallel.
pub fn decompose_graph(graph: &HyperGraph, method: Method) -> Result<DecomposedGraph> {
    let mut entities = graph.entities.clone();
    let mut relations = graph.relations.clone();

    let mut composites: HashMap<(RelationId, RelationId), RelationId> = HashMap::new();
    let mut reify_rel = None;
    let mut promoted: HashMap<RelationId, EntityId> = HashMap::new();
    let mut pseudo: [Vec<EntityId>; 3] = Default::default();

    match method {
        Method::Prune | Method::Direct => {}
        Method::Hyper => {
            for (_, f) in graph.all_facts() {
                for q in &f.qualifiers {
                    if let std::collections::hash_map::Entry::Vacant(e) = composites.entry((f.relation, q.relation)) {
                        let label = composite_label(relations.label(f.relation), relations.label(q.relation));
                        e.insert(relations.intern_synthesized(&label)?);
                    }
                }
            }
        }
        Method::Reify => {
            reify_rel = Some(ReifyRelations::intern(&mut relations)?);
            for split in Split::ALL {
                for (i, f) in graph.split(split).iter().enumerate() {
                    let label = pseudo_entity_label(split, i);
                    let before = entities.len();
                    let id = entities.intern_synthesized(&label)?;
                    if entities.len() == before {
                        return Err(HkgError::Config(format!("pseudo entity label `{label}` already in use")));
                    }
                    pseudo[split as usize].push(id);
                    if let std::collections::hash_map::Entry::Vacant(e) = promoted.entry(f.relation) {
                        let label = promoted_relation_label(relations.label(f.relation));
                        e.insert(entities.intern_synthesized(&label)?);
                    }
                }
            }
        }
    }

    let rewrite = |split: Split, index: usize, f: &HyperFact| -> Vec<Triple> {
        match method {
            Method::Prune => decompose_prune(f),
            Method::Direct => decompose_direct(f),
            Method::Hyper => {
                let mut out = decompose_direct(f);
                out.extend(
                    f.qualifiers
                        .iter()
                        .map(|q| Triple::new(q.entity, composites[&(f.relation, q.relation)], f.object)),
                );
                out
            }
            Method::Reify => reify_with(
                f,
                pseudo[split as usize][index],
                promoted[&f.relation],
                reify_rel.expect("interned above"),
            ),
        }
    };

    let mut splits: [SplitTriples; 3] = Default::default();
    for split in Split::ALL {
        let facts: Vec<(usize, &HyperFact)> = graph.split(split).iter().enumerate().collect();
        let per_fact = par::map(&facts, par::Mode::Auto, |&(i, f)| rewrite(split, i, f));
        let out = &mut splits[split as usize];
        for triples in per_fact {
            out.provenance.push(Provenance {
                start: out.triples.len(),
                len: triples.len(),
            });
            out.triples.extend(triples);
        }
    }
    let [train, valid, test] = splits;
    Ok(DecomposedGraph {
        method,
        n_source_entities: graph.entities.len(),
        n_source_relations: graph.relations.len(),
        entities,
        relations,
        train,
        valid,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Qualifier;

    fn e(i: u32) -> EntityId {
        EntityId(i)
    }
    fn r(i: u32) -> RelationId {
        RelationId(i)
    }

    fn rel_vocab() -> Vocab<RelationId> {
        Vocab::from_labels(["r", "qr1", "qr2"]).unwrap()
    }

    fn fact2() -> HyperFact {
        HyperFact::new(e(0), r(0), e(1)).with_qualifiers(vec![
            Qualifier::new(r(1), e(2)),
            Qualifier::new(r(2), e(3)),
        ])
    }

    #[test]
    fn prune_keeps_main_triple() {
        assert_eq!(decompose_prune(&fact2()), vec![Triple::new(e(0), r(0), e(1))]);
        assert_eq!(decompose_prune(&HyperFact::new(e(0), r(0), e(1))).len(), 1);
    }

    #[test]
    fn direct_links_qualifiers_to_subject() {
        let f = HyperFact::new(e(0), r(0), e(1)).with_qualifiers(vec![Qualifier::new(r(1), e(2))]);
        assert_eq!(
            decompose_direct(&f),
            vec![Triple::new(e(0), r(0), e(1)), Triple::new(e(0), r(1), e(2))]
        );
        assert_eq!(decompose_direct(&HyperFact::new(e(0), r(0), e(1))).len(), 1);
    }

    #[test]
    fn hyper_adds_composite_relations() {
        let mut rels = rel_vocab();
        let out = decompose_hyper(&fact2(), &mut rels).unwrap();
        assert_eq!(out.len(), 5);
        let c1 = rels.get("r||qr1").unwrap();
        let c2 = rels.get("r||qr2").unwrap();
        assert!(rels.is_synthesized(c1));
        assert_eq!(
            out,
            vec![
                Triple::new(e(0), r(0), e(1)),
                Triple::new(e(0), r(1), e(2)),
                Triple::new(e(0), r(2), e(3)),
                Triple::new(e(2), c1, e(1)),
                Triple::new(e(3), c2, e(1)),
            ]
        );
        // a second fact with the same (r, qr) reuses the composite
        let other = HyperFact::new(e(5), r(0), e(6)).with_qualifiers(vec![Qualifier::new(r(1), e(7))]);
        let n = rels.len();
        let out2 = decompose_hyper(&other, &mut rels).unwrap();
        assert_eq!(rels.len(), n);
        assert_eq!(out2[2].relation, c1);
    }

    #[test]
    fn reify_hub_drops_main_triple() {
        let mut ents: Vocab<EntityId> = Vocab::from_labels(["s", "o", "qe"]).unwrap();
        let mut rels: Vocab<RelationId> = Vocab::from_labels(["r", "qr"]).unwrap();
        let f = HyperFact::new(e(0), r(0), e(1)).with_qualifiers(vec![Qualifier::new(r(1), e(2))]);
        let out = decompose_reify(&f, "_:p0", &mut ents, &mut rels).unwrap();
        assert_eq!(out.len(), 4);
        let pe = ents.get("_:p0").unwrap();
        assert!(out.iter().all(|t| t.subject == pe));
        assert!(!out.contains(&f.main_triple()));
        let plain = HyperFact::new(e(0), r(0), e(1));
        let out = decompose_reify(&plain, "_:p1", &mut ents, &mut rels).unwrap();
        assert_eq!(out.len(), 3);
        assert!(decompose_reify(&plain, "_:p1", &mut ents, &mut rels).is_err());
        // three reification relations, one promoted relation entity
        assert_eq!(rels.len(), 5);
        assert_eq!(ents.len(), 3 + 2 + 1);
    }

    #[test]
    fn composite_labels_invert() {
        for (a, b) in [("r", "q"), ("a||b", "c"), ("a|", "|b"), ("x\\", "y")] {
            let l = composite_label(a, b);
            assert_eq!(split_composite_label(&l), Some((a.to_string(), b.to_string())), "{l}");
        }
        assert_ne!(composite_label("a|", "b"), composite_label("a", "|b"));
        assert_eq!(composite_label("r", "qr"), "r||qr");
    }

    fn small_graph() -> HyperGraph {
        let mut g = HyperGraph {
            entities: Vocab::from_labels(["a", "b", "c", "d"]).unwrap(),
            relations: Vocab::from_labels(["r", "q"]).unwrap(),
            ..Default::default()
        };
        g.train = vec![
            HyperFact::new(e(0), r(0), e(1)).with_qualifiers(vec![Qualifier::new(r(1), e(2))]),
            HyperFact::new(e(1), r(0), e(2)),
            HyperFact::new(e(0), r(0), e(3)).with_qualifiers(vec![Qualifier::new(r(1), e(2))]),
        ];
        g.test = vec![HyperFact::new(e(2), r(0), e(3)).with_qualifiers(vec![Qualifier::new(r(1), e(0))])];
        g
    }

    #[test]
    fn graph_counts_and_provenance() {
        let g = small_graph();
        let q: usize = g.all_facts().map(|(_, f)| f.arity()).sum();
        let f = g.n_facts();
        let total = |d: &DecomposedGraph| Split::ALL.iter().map(|&s| d.split(s).triples.len()).sum::<usize>();
        let direct = decompose_graph(&g, Method::Direct).unwrap();
        assert_eq!(total(&direct), f + q);
        let hyper = decompose_graph(&g, Method::Hyper).unwrap();
        assert_eq!(total(&hyper), f + 2 * q);
        // (a, q, c) is emitted twice in train by the direct method
        assert_eq!(direct.dedup_counts(), [1, 0, 0]);
        for split in Split::ALL {
            let st = hyper.split(split);
            let rebuilt: Vec<Triple> = (0..st.provenance.len()).flat_map(|i| st.fact_triples(i).to_vec()).collect();
            assert_eq!(rebuilt, st.triples);
        }
        // test-split qualifier triples never enter the training edge list
        assert!(!hyper.training_edges().contains(&Triple::new(e(2), r(1), e(0))));
    }

    #[test]
    fn reify_graph_pseudo_entities_are_fresh() {
        let g = small_graph();
        let d = decompose_graph(&g, Method::Reify).unwrap();
        let hubs: HashSet<EntityId> = d.train.triples.iter().map(|t| t.subject).collect();
        assert_eq!(hubs.len(), g.train.len());
        assert!(hubs.iter().all(|&h| d.entities.is_synthesized(h)));
        assert_eq!(d.n_source_entities, 4);
        // three reify relations, no promotion of qualifier relations
        assert_eq!(d.relations.len(), 2 + 3);
        assert_eq!(d.entities.len(), 4 + g.n_facts() + 1);
    }
}
