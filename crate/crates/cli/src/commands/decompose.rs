use hkg_core::decompose::decompose_graph;
use hkg_core::model::Split;

use super::Context;
use crate::error::{CliError, CliResult};
use crate::DecomposeArgs;

pub fn run(ctx: &Context, args: DecomposeArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("decompose");
    let data = crate::DataArgs {
        data: Some(args.input.clone()),
        train: None,
        valid: None,
        test: None,
        format: args.format,
    };
    let (graph, _) = super::load_data(&data, &mut manifest)?;
    let dec = decompose_graph(&graph, args.method)?;
    dec.write_dir(&args.out)
        .map_err(|e| CliError::from(e).context(args.out.display()))?;
    manifest.config(serde_json::json!({ "method": args.method }), None);
    let outputs = ["train.tsv", "valid.tsv", "test.tsv", "provenance.tsv", "entities.tsv", "relations.tsv"]
        .iter()
        .map(|f| args.out.join(f))
        .collect();
    manifest.finish(outputs).write_in_dir(&args.out)?;
    let dups = dec.dedup_counts();
    for split in Split::ALL {
        let st = dec.split(split);
        println!(
            "{}\t{} facts\t{} triples\t{} unique",
            split.name(),
            graph.split(split).len(),
            st.triples.len(),
            st.triples.len() - dups[split as usize]
        );
    }
    println!(
        "entities\t{} ({} synthesized)\nrelations\t{} ({} synthesized)",
        dec.entities.len(),
        dec.entities.len() - dec.n_source_entities,
        dec.relations.len(),
        dec.relations.len() - dec.n_source_relations
    );
    Ok(())
}
