use std::io::Write;

use hkg_core::ingest::{compute_stats, ExpectedStats};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::StatsArgs;

fn read_expected(path: &std::path::Path) -> CliResult<ExpectedStats> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.message().to_string())
    };
    parsed.map_err(|e| CliError::config(e).context(path.display()))
}

pub fn run(ctx: &Context, args: StatsArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("stats");
    let expected = args.expect.as_deref().map(read_expected).transpose()?;
    let (graph, report) = super::load_data(&args.data, &mut manifest)?;
    let stats = compute_stats(&graph);
    let doc = serde_json::json!({
        "stats": stats,
        "partition_holds": stats.partition_holds(),
        "duplicate_facts_dropped": report.duplicate_facts_dropped,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    println!("{text}");
    eprint!("{}", stats.to_table());
    if let Some(out) = &args.out {
        let mut w = super::create_file(out)?;
        writeln!(w, "{text}")?;
        w.flush()?;
        if let Some(e) = &args.expect {
            manifest.input(e)?;
        }
        manifest.finish(vec![out.clone()]).write_beside(out)?;
    }
    if let Some(expected) = expected {
        let diff = expected.diff(&stats);
        if !diff.is_empty() {
            let parts: Vec<String> = diff
                .iter()
                .map(|m| format!("{} expected {} got {}", m.field, m.expected, m.actual))
                .collect();
            return Err(CliError::data(format!("statistics differ: {}", parts.join("; "))));
        }
    }
    Ok(())
}
