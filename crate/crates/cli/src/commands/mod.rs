pub mod curvature;
pub mod decompose;
pub mod eval;
pub mod stats;
pub mod train;

use std::path::{Path, PathBuf};

use hkg_core::ingest::{load_graph, locate_splits, LoadReport};
use hkg_core::model::HyperGraph;

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::DataArgs;

pub struct Context<'a> {
    pub argv: &'a [String],
    pub threads: usize,
}

impl Context<'_> {
    pub fn manifest(&self, subcommand: &str) -> ManifestBuilder {
        ManifestBuilder::start(subcommand, self.argv, self.threads)
    }
}

fn split_paths(data: &DataArgs) -> CliResult<[PathBuf; 3]> {
    if let Some(dir) = &data.data {
        return Ok(locate_splits(dir)?);
    }
    match (&data.train, &data.valid, &data.test) {
        (Some(t), Some(v), Some(s)) => Ok([t.clone(), v.clone(), s.clone()]),
        _ => Err(CliError::new(
            crate::error::Category::Usage,
            "give either --data DIR or all of --train, --valid, --test",
        )),
    }
}

/// Loads the three splits, records their digests, and logs dropped duplicates.
pub fn load_data(data: &DataArgs, manifest: &mut ManifestBuilder) -> CliResult<(HyperGraph, LoadReport)> {
    let paths = split_paths(data)?;
    for p in &paths {
        manifest.input(p)?;
    }
    let (graph, report) = load_graph([&paths[0], &paths[1], &paths[2]], data.format.map(Into::into))?;
    log_load_report(&report);
    Ok((graph, report))
}

pub fn log_load_report(report: &LoadReport) {
    let dropped: usize = report.duplicate_facts_dropped.iter().sum();
    if dropped > 0 {
        log::warn!(
            "dropped duplicate statements (train/valid/test): {:?}",
            report.duplicate_facts_dropped
        );
    }
    if report.facts_with_duplicate_qualifiers > 0 {
        log::warn!(
            "{} statements repeat a qualifier pair; kept as-is",
            report.facts_with_duplicate_qualifiers
        );
    }
}

pub fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::from(e).context(parent.display()))?;
    }
    Ok(())
}

pub fn create_file(path: &Path) -> CliResult<std::io::BufWriter<std::fs::File>> {
    create_parent(path)?;
    let f = std::fs::File::create(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(std::io::BufWriter::new(f))
}
