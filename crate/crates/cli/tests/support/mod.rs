#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hkg_core::model::{HyperGraph, Split};
use hkg_core::synthetic::{generate, SyntheticConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn hkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hkg")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the splits of `graph` as `{train,valid,test}.tsv` in `dir`.
pub fn write_tsv_splits(graph: &HyperGraph, dir: &Path) -> [PathBuf; 3] {
    std::fs::create_dir_all(dir).unwrap();
    Split::ALL.map(|split| {
        let path = dir.join(format!("{}.tsv", split.name()));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
        for f in graph.split(split) {
            write!(
                w,
                "{}\t{}\t{}",
                graph.entities.label(f.subject),
                graph.relations.label(f.relation),
                graph.entities.label(f.object)
            )
            .unwrap();
            for q in &f.qualifiers {
                write!(w, "\t{}\t{}", graph.relations.label(q.relation), graph.entities.label(q.entity)).unwrap();
            }
            writeln!(w).unwrap();
        }
        w.flush().unwrap();
        path
    })
}

pub fn small_dataset(dir: &Path, seed: u64) -> HyperGraph {
    let cfg = SyntheticConfig {
        n_entities: 40,
        n_relations: 5,
        n_facts: [120, 20, 20],
        hyper_fraction: 0.5,
        qualifiers: (1, 3),
        zipf_exponent: 0.5,
    };
    let g = generate(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    write_tsv_splits(&g, dir);
    g
}
