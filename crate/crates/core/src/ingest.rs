//! Dataset parsing and summary statistics.
//!
//! Two line formats are accepted:
//! - tab-separated statements: `s \t r \t o [\t qr \t qe]*`
//! - one JSON record per line: `{"subject":..,"relation":..,"object":..,"qualifiers":[[qr,qe],..]}`
//!
//! Labels are interned on sight, train split first, then valid, then test.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HkgError, Result};
use crate::model::{EntityId, HyperFact, HyperGraph, Qualifier, RelationId, Split, Vocab};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Json,
}

impl Format {
    /// Guesses the format from a file extension; anything but `.json`/`.jsonl` is TSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") | Some("jsonl") | Some("ndjson") => Format::Json,
            _ => Format::Tsv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = HkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "json" => Ok(Format::Json),
            other => Err(HkgError::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// Mutable vocabularies shared while a dataset is read.
pub struct Interner<'a> {
    pub entities: &'a mut Vocab<EntityId>,
    pub relations: &'a mut Vocab<RelationId>,
}

/// Parses one tab-separated statement. `line_no` is 1-based and only used in errors.
pub fn parse_statement_line(line: &str, line_no: usize, vocab: &mut Interner<'_>) -> Result<HyperFact> {
    let tokens: Vec<&str> = line.split('\t').map(str::trim).collect();
    if tokens.len() < 3 {
        return Err(HkgError::Parse {
            line: line_no,
            message: format!("expected at least 3 tokens, found {}", tokens.len()),
        });
    }
    if tokens.len().is_multiple_of(2) {
        return Err(HkgError::Parse {
            line: line_no,
            message: format!(
                "dangling qualifier relation `{}` (even token count {})",
                tokens[tokens.len() - 1],
                tokens.len()
            ),
        });
    }
    build_fact(tokens[0], tokens[1], tokens[2], tokens[3..].chunks(2).map(|c| (c[0], c[1])), line_no, vocab)
}

#[derive(Deserialize)]
struct RawRecord {
    subject: Option<String>,
    relation: Option<String>,
    object: Option<String>,
    qualifiers: Option<Vec<Vec<String>>>,
}

/// Parses one structured (JSON) statement record.
pub fn parse_json_statement(record: &str, line_no: usize, vocab: &mut Interner<'_>) -> Result<HyperFact> {
    let raw: RawRecord = serde_json::from_str(record).map_err(|e| HkgError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let subject = raw.subject.ok_or(HkgError::MissingField { line: line_no, field: "subject" })?;
    let relation = raw.relation.ok_or(HkgError::MissingField { line: line_no, field: "relation" })?;
    let object = raw.object.ok_or(HkgError::MissingField { line: line_no, field: "object" })?;
    let qualifiers = raw
        .qualifiers
        .ok_or(HkgError::MissingField { line: line_no, field: "qualifiers" })?;
    if let Some(bad) = qualifiers.iter().find(|q| q.len() != 2) {
        return Err(HkgError::Parse {
            line: line_no,
            message: format!("qualifier entry has {} elements, expected 2", bad.len()),
        });
    }
    build_fact(
        &subject,
        &relation,
        &object,
        qualifiers.iter().map(|q| (q[0].as_str(), q[1].as_str())),
        line_no,
        vocab,
    )
}

fn build_fact<'s>(
    s: &str,
    r: &str,
    o: &str,
    quals: impl Iterator<Item = (&'s str, &'s str)>,
    line_no: usize,
    vocab: &mut Interner<'_>,
) -> Result<HyperFact> {
    let at_line = |e: HkgError| match e {
        HkgError::EmptyLabel => HkgError::Parse {
            line: line_no,
            message: "empty label".into(),
        },
        other => other,
    };
    let subject = vocab.entities.intern(s).map_err(at_line)?;
    let relation = vocab.relations.intern(r).map_err(at_line)?;
    let object = vocab.entities.intern(o).map_err(at_line)?;
    let mut qualifiers = Vec::new();
    for (qr, qe) in quals {
        let qr = vocab.relations.intern(qr).map_err(at_line)?;
        let qe = vocab.entities.intern(qe).map_err(at_line)?;
        qualifiers.push(Qualifier::new(qr, qe));
    }
    Ok(HyperFact {
        subject,
        relation,
        object,
        qualifiers,
    })
}

/// Bookkeeping from reading one dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Statements dropped because an equal (canonical) statement was already in the split.
    pub duplicate_facts_dropped: [usize; 3],
    /// Statements carrying the same (qr, qe) pair more than once. Kept as-is.
    pub facts_with_duplicate_qualifiers: usize,
}

/// Reads all statements from `reader` into `split`, skipping blank and `#` lines.
pub fn read_split<R: BufRead>(
    reader: R,
    format: Format,
    graph: &mut HyperGraph,
    split: Split,
    report: &mut LoadReport,
) -> Result<()> {
    let mut seen: HashSet<_> = graph.split(split).iter().map(HyperFact::canonical).collect();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut interner = Interner {
            entities: &mut graph.entities,
            relations: &mut graph.relations,
        };
        let fact = match format {
            Format::Tsv => parse_statement_line(trimmed, i + 1, &mut interner)?,
            Format::Json => parse_json_statement(trimmed, i + 1, &mut interner)?,
        };
        if fact.has_duplicate_qualifiers() {
            report.facts_with_duplicate_qualifiers += 1;
        }
        if seen.insert(fact.canonical()) {
            graph.split_mut(split).push(fact);
        } else {
            report.duplicate_facts_dropped[split as usize] += 1;
        }
    }
    Ok(())
}

/// Loads train/valid/test files, in that order, into one graph.
pub fn load_graph(paths: [&Path; 3], format: Option<Format>) -> Result<(HyperGraph, LoadReport)> {
    let mut graph = HyperGraph::default();
    let mut report = LoadReport::default();
    for (split, path) in Split::ALL.into_iter().zip(paths) {
        let fmt = format.unwrap_or_else(|| Format::from_path(path));
        let file = std::fs::File::open(path).map_err(|e| {
            std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
        })?;
        read_split(std::io::BufReader::new(file), fmt, &mut graph, split, &mut report).map_err(
            |e| match e {
                HkgError::Parse { line, message } => HkgError::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            },
        )?;
    }
    Ok((graph, report))
}

/// Finds `train`, `valid`, `test` files inside a directory (any of `.tsv`, `.txt`, `.json`, `.jsonl`).
pub fn locate_splits(dir: &Path) -> Result<[std::path::PathBuf; 3]> {
    let find = |split: Split| -> Result<std::path::PathBuf> {
        for ext in ["tsv", "txt", "json", "jsonl"] {
            let p = dir.join(format!("{}.{ext}", split.name()));
            if p.is_file() {
                return Ok(p);
            }
        }
        Err(HkgError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {} file in {}", split.name(), dir.display()),
        )))
    };
    Ok([find(Split::Train)?, find(Split::Valid)?, find(Split::Test)?])
}

/// Writes facts in the canonical export format (one JSON record per line).
pub fn write_json_statements<W: Write>(mut out: W, graph: &HyperGraph, facts: &[HyperFact]) -> Result<()> {
    for f in facts {
        let quals: Vec<[&str; 2]> = f
            .qualifiers
            .iter()
            .map(|q| [graph.relations.label(q.relation), graph.entities.label(q.entity)])
            .collect();
        let rec = serde_json::json!({
            "subject": graph.entities.label(f.subject),
            "relation": graph.relations.label(f.relation),
            "object": graph.entities.label(f.object),
            "qualifiers": quals,
        });
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-dataset counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Minimum qualifier count over all facts (0 whenever any plain triple exists).
    pub qual_min: usize,
    pub qual_max: usize,
    /// Minimum qualifier count over facts with at least one qualifier.
    pub qual_min_hyper: Option<usize>,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_triple_facts: usize,
    pub n_hyper_facts: usize,
    pub n_duplicate_qualifier_facts: usize,
}

#[derive(Default, Clone, Copy)]
struct Partial {
    qual_min: Option<usize>,
    qual_max: usize,
    qual_min_hyper: Option<usize>,
    triples: usize,
    hyper: usize,
    dup_quals: usize,
}

impl Partial {
    fn add(mut self, f: &HyperFact) -> Self {
        let n = f.arity();
        self.qual_min = Some(self.qual_min.map_or(n, |m| m.min(n)));
        self.qual_max = self.qual_max.max(n);
        if n == 0 {
            self.triples += 1;
        } else {
            self.hyper += 1;
            self.qual_min_hyper = Some(self.qual_min_hyper.map_or(n, |m| m.min(n)));
        }
        if f.has_duplicate_qualifiers() {
            self.dup_quals += 1;
        }
        self
    }

    fn merge(self, o: Partial) -> Partial {
        let min_opt = |a: Option<usize>, b: Option<usize>| match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, None) => x,
            (None, y) => y,
        };
        Partial {
            qual_min: min_opt(self.qual_min, o.qual_min),
            qual_max: self.qual_max.max(o.qual_max),
            qual_min_hyper: min_opt(self.qual_min_hyper, o.qual_min_hyper),
            triples: self.triples + o.triples,
            hyper: self.hyper + o.hyper,
            dup_quals: self.dup_quals + o.dup_quals,
        }
    }
}

/// Computes the dataset summary. Chunk-parallel when the `parallel` feature is on.
pub fn compute_stats(graph: &HyperGraph) -> DatasetStats {
    let total = Split::ALL
        .into_iter()
        .map(|s| {
            let chunks: Vec<&[HyperFact]> = graph.split(s).chunks(4096).collect();
            par::map(&chunks, par::Mode::Auto, |c| c.iter().fold(Partial::default(), Partial::add))
                .into_iter()
                .fold(Partial::default(), Partial::merge)
        })
        .fold(Partial::default(), Partial::merge);
    DatasetStats {
        n_entities: graph.entities.len(),
        n_relations: graph.relations.len(),
        qual_min: total.qual_min.unwrap_or(0),
        qual_max: total.qual_max,
        qual_min_hyper: total.qual_min_hyper,
        n_train: graph.train.len(),
        n_valid: graph.valid.len(),
        n_test: graph.test.len(),
        n_triple_facts: total.triples,
        n_hyper_facts: total.hyper,
        n_duplicate_qualifier_facts: total.dup_quals,
    }
}

impl DatasetStats {
    /// `n_triple_facts + n_hyper_facts == n_train + n_valid + n_test`.
    pub fn partition_holds(&self) -> bool {
        self.n_triple_facts + self.n_hyper_facts == self.n_train + self.n_valid + self.n_test
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{k:<12} {v:>12}");
        };
        row(&mut s, "|V|", self.n_entities.to_string());
        row(&mut s, "|R|", self.n_relations.to_string());
        row(&mut s, "#Qual.", format!("{}-{}", self.qual_min, self.qual_max));
        row(&mut s, "#Tra.", self.n_train.to_string());
        row(&mut s, "#Val.", self.n_valid.to_string());
        row(&mut s, "#Tst.", self.n_test.to_string());
        row(&mut s, "#Tri.", self.n_triple_facts.to_string());
        row(&mut s, "#HR", self.n_hyper_facts.to_string());
        if let Some(m) = self.qual_min_hyper {
            row(&mut s, "#Qual.(HR)", format!("{m}-{}", self.qual_max));
        }
        if self.n_duplicate_qualifier_facts > 0 {
            row(&mut s, "dup. quals", self.n_duplicate_qualifier_facts.to_string());
        }
        s
    }
}

/// Expected counts supplied by the user; absent fields are not checked.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedStats {
    pub n_entities: Option<usize>,
    pub n_relations: Option<usize>,
    pub qual_min: Option<usize>,
    pub qual_max: Option<usize>,
    pub n_train: Option<usize>,
    pub n_valid: Option<usize>,
    pub n_test: Option<usize>,
    pub n_triple_facts: Option<usize>,
    pub n_hyper_facts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatMismatch {
    pub field: &'static str,
    pub expected: usize,
    pub actual: usize,
}

impl ExpectedStats {
    pub fn diff(&self, stats: &DatasetStats) -> Vec<StatMismatch> {
        let pairs: [(&'static str, Option<usize>, usize); 9] = [
            ("n_entities", self.n_entities, stats.n_entities),
            ("n_relations", self.n_relations, stats.n_relations),
            ("qual_min", self.qual_min, stats.qual_min),
            ("qual_max", self.qual_max, stats.qual_max),
            ("n_train", self.n_train, stats.n_train),
            ("n_valid", self.n_valid, stats.n_valid),
            ("n_test", self.n_test, stats.n_test),
            ("n_triple_facts", self.n_triple_facts, stats.n_triple_facts),
            ("n_hyper_facts", self.n_hyper_facts, stats.n_hyper_facts),
        ];
        pairs
            .into_iter()
            .filter_map(|(field, exp, actual)| match exp {
                Some(expected) if expected != actual => Some(StatMismatch {
                    field,
                    expected,
                    actual,
                }),
                _ => None,
            })
            .collect()
    }
}
