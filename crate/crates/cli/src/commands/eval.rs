use std::io::Write;

use hkg_core::checkpoint::Checkpoint;
use hkg_core::evaluation::{evaluate, EvalOptions};
use hkg_core::ingest::Format;
use hkg_core::model::Split;
use hkg_core::par::Mode;

use super::Context;
use crate::error::{CliError, CliResult};
use crate::EvalArgs;

pub fn run(ctx: &Context, args: EvalArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("eval");
    manifest.input(&args.ckpt)?;
    manifest.input(&args.test)?;
    let ckpt = Checkpoint::load(&args.ckpt).map_err(|e| CliError::from(e).context(args.ckpt.display()))?;
    manifest.config(serde_json::to_value(&ckpt.config)?, Some(ckpt.config.seed));
    let format = args.format.map_or_else(|| Format::from_path(&args.test), Into::into);
    let file = std::fs::File::open(&args.test).map_err(|e| CliError::from(e).context(args.test.display()))?;
    let restored = ckpt
        .restore(std::io::BufReader::new(file), format)
        .map_err(|e| CliError::from(e).context(args.test.display()))?;
    super::log_load_report(&restored.load_report);
    let task = &restored.task;
    let queries = task.eval_queries(Split::Test);
    let opts = EvalOptions {
        n_ranked: task.n_answer_entities,
        batch_size: ckpt.config.eval_batch_size,
        mode: Mode::Auto,
    };
    let report = evaluate(restored.model.as_ref(), queries, &task.filter, opts)?;
    let doc = serde_json::json!({
        "model": ckpt.kind,
        "decomposition": ckpt.method,
        "n_test_facts": restored.graph.test.len(),
        "n_candidates": task.n_answer_entities,
        "truncated_facts": task.truncated_facts,
        "object": report.object,
        "subject": report.subject,
        "average": report.average,
    });
    let mut w = super::create_file(&args.out)?;
    writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
    w.flush()?;
    manifest.finish(vec![args.out.clone()]).write_beside(&args.out)?;
    println!("direction\tqueries\tmrr\thits@1\thits@3\thits@10");
    for (name, m) in [("object", &report.object), ("subject", &report.subject), ("average", &report.average)] {
        println!(
            "{name}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            m.n_queries,
            m.mrr,
            m.hits(1),
            m.hits(3),
            m.hits(10)
        );
    }
    Ok(())
}
