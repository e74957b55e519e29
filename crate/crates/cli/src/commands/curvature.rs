use std::io::Write;

use hkg_core::ingest::{read_split, Format, LoadReport};
use hkg_core::model::{HyperGraph, Split};
use hkg_core::topology::{build_simple_graph, curvature_report};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::CurvatureArgs;

pub fn run(ctx: &Context, args: CurvatureArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("curvature");
    let input = if args.input.is_dir() {
        args.input.join("train.tsv")
    } else {
        args.input.clone()
    };
    manifest.input(&input)?;
    let file = std::fs::File::open(&input).map_err(|e| CliError::from(e).context(input.display()))?;
    let mut graph = HyperGraph::default();
    read_split(
        std::io::BufReader::new(file),
        Format::Tsv,
        &mut graph,
        Split::Train,
        &mut LoadReport::default(),
    )
    .map_err(|e| CliError::from(e).context(input.display()))?;
    if let Some(f) = graph.train.iter().find(|f| f.arity() > 0) {
        return Err(CliError::data(format!(
            "{}: expected plain triples, found a statement with {} qualifiers",
            input.display(),
            f.arity()
        )));
    }
    let triples: Vec<_> = graph.train.iter().map(|f| f.main_triple()).collect();
    let g = build_simple_graph(&triples, graph.entities.len());
    log::info!(
        "{} nodes, {} edges ({} self-loops and {} parallel edges dropped)",
        g.n_nodes(),
        g.n_edges(),
        g.self_loops_dropped,
        g.duplicate_edges_dropped
    );
    let report = curvature_report(&g);
    let label = |i: usize| graph.entities.labels()[i].clone();
    let mut w = super::create_file(&args.out)?;
    report.write_csv(&mut w, Some(&label))?;
    w.flush()?;
    let mut outputs = vec![args.out.clone()];
    if let Some(path) = &args.distribution {
        let mut w = super::create_file(path)?;
        report.write_distribution(&mut w)?;
        w.flush()?;
        outputs.push(path.clone());
    }
    manifest.finish(outputs).write_beside(&args.out)?;
    println!(
        "edges {}\tnonpositive {}\tnegative {}\tproportion {}",
        report.edges.len(),
        report.n_nonpositive,
        report.n_negative,
        report.proportion_nonpositive
    );
    Ok(())
}
