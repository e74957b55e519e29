use std::path::{Path, PathBuf};

use hkg_core::checkpoint::Checkpoint;
use hkg_core::par::Mode;
use hkg_core::task::Task;
use hkg_core::training::{write_trace_csv, TrainConfig, Trainer};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::TrainArgs;

/// Parses a `key=value` override; the value is read as a TOML literal and
/// falls back to a bare string.
fn parse_override(s: &str) -> CliResult<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{s}` is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::config(format!("override `{s}` has an empty key")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// File values, then `--set` overrides, then the dedicated flags.
pub fn resolve_config(
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    epochs: Option<usize>,
) -> CliResult<TrainConfig> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::from(e).context(p.display()))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::config(e.message().to_string()).context(p.display()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        table.insert(k, v);
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| CliError::config("seed must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    if let Some(e) = epochs {
        table.insert("epochs".into(), toml::Value::Integer(e as i64));
    }
    Ok(TrainConfig::from_toml(&table.to_string())?)
}

pub fn run(ctx: &Context, args: TrainArgs) -> CliResult<()> {
    let mut manifest = ctx.manifest("train");
    let cfg = resolve_config(args.config.as_deref(), &args.overrides, args.seed, args.epochs)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    manifest.config(serde_json::to_value(&cfg)?, Some(cfg.seed));
    let (graph, _) = super::load_data(&args.data, &mut manifest)?;
    graph.validate()?;
    let task = Task::build(&graph, args.model, args.decompose, cfg.max_qualifiers)?;
    log::info!(
        "{} on {} entities / {} relations, {} training queries",
        args.model,
        task.entities.len(),
        task.relations.len(),
        task.train_queries.len()
    );
    let outcome = Trainer {
        graph: &graph,
        task: &task,
        cfg: &cfg,
        mode: Mode::Auto,
        on_epoch: None,
    }
    .run()?;

    super::create_parent(&args.out)?;
    let ckpt = Checkpoint::new(
        &graph,
        &task,
        &cfg,
        outcome.model.as_ref(),
        outcome.best_epoch,
        outcome.best_valid_mrr,
    );
    ckpt.save(&args.out)
        .map_err(|e| CliError::from(e).context(args.out.display()))?;
    let trace = args.trace.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".trace.csv");
        args.out.with_file_name(name)
    });
    let mut w = super::create_file(&trace)?;
    write_trace_csv(&outcome.trace, &mut w)?;
    std::io::Write::flush(&mut w)?;
    let outputs: Vec<PathBuf> = vec![args.out.clone(), trace];
    manifest.finish(outputs).write_beside(&args.out)?;

    println!("epochs\t{}", outcome.trace.len());
    println!("best_epoch\t{}", outcome.best_epoch);
    match outcome.best_valid_mrr {
        Some(m) => println!("best_valid_mrr\t{m:.6}"),
        None => println!("best_valid_mrr\tnone"),
    }
    println!("stopped_early\t{}", outcome.stopped_early);
    println!(
        "leakage_audit\tgraph_edges={} foreign={} heldout_targets_seen={}",
        outcome.audit.n_graph_edges, outcome.audit.foreign, outcome.audit.heldout_targets_seen
    );
    if outcome.gt_fallbacks > 0 {
        println!("gt_fallbacks\t{}", outcome.gt_fallbacks);
    }
    Ok(())
}
