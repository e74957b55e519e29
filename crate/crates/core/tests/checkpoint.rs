use hkg_core::checkpoint::Checkpoint;
use hkg_core::decompose::Method;
use hkg_core::error::HkgError;
use hkg_core::evaluation::{evaluate, EvalOptions};
use hkg_core::ingest::{write_json_statements, Format};
use hkg_core::model::{HyperGraph, Split};
use hkg_core::models::ModelKind;
use hkg_core::par::Mode;
use hkg_core::synthetic::{generate, SyntheticConfig};
use hkg_core::task::Task;
use hkg_core::training::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph() -> HyperGraph {
    let cfg = SyntheticConfig {
        n_entities: 25,
        n_relations: 4,
        n_facts: [60, 12, 12],
        hyper_fraction: 0.5,
        qualifiers: (1, 3),
        zipf_exponent: 0.0,
    };
    generate(&cfg, &mut ChaCha8Rng::seed_from_u64(5))
}

fn config() -> TrainConfig {
    TrainConfig {
        seed: 9,
        epochs: 3,
        dim: 8,
        layers: 1,
        heads: 2,
        qi_layers: 1,
        decoder_layers: 1,
        negatives: 4,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

fn trained(graph: &HyperGraph, kind: ModelKind, method: Option<Method>) -> (Task, Checkpoint) {
    let task = Task::build(graph, kind, method, None).unwrap();
    let cfg = config();
    let out = Trainer {
        graph,
        task: &task,
        cfg: &cfg,
        mode: Mode::Auto,
        on_epoch: None,
    }
    .run()
    .unwrap();
    let ckpt = Checkpoint::new(graph, &task, &cfg, out.model.as_ref(), out.best_epoch, out.best_valid_mrr);
    (task, ckpt)
}

fn test_jsonl(graph: &HyperGraph) -> Vec<u8> {
    let mut buf = Vec::new();
    write_json_statements(&mut buf, graph, graph.split(Split::Test)).unwrap();
    buf
}

fn cases() -> Vec<(ModelKind, Option<Method>)> {
    let mut v: Vec<_> = Method::ALL.iter().map(|&m| (ModelKind::ComplEx, Some(m))).collect();
    v.push((ModelKind::TransH, Some(Method::Hyper)));
    v.push((ModelKind::Gnn, Some(Method::Reify)));
    v.push((ModelKind::FormerGnn, None));
    v
}

#[test]
fn json_round_trip_is_bit_exact() {
    let g = graph();
    for (kind, method) in cases() {
        let (_, ckpt) = trained(&g, kind, method);
        let text = ckpt.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ckpt, "{kind} {method:?}");
        for (a, b) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
            let bits = |t: &hkg_core::tensor::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn restored_model_reproduces_metrics() {
    let g = graph();
    for (kind, method) in cases() {
        let (task, ckpt) = trained(&g, kind, method);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let restored = loaded.restore(&test_jsonl(&g)[..], Format::Json).unwrap();
        let opts = EvalOptions {
            n_ranked: task.n_answer_entities,
            batch_size: 32,
            mode: Mode::Sequential,
        };
        let rebuilt = Task::build(&g, kind, method, None).unwrap();
        assert_eq!(restored.task.n_answer_entities, rebuilt.n_answer_entities);
        let original = hkg_core::training::restore_model(&task, &config(), ckpt.params.clone()).unwrap();
        let want = evaluate(original.as_ref(), task.eval_queries(Split::Test), &task.filter, opts).unwrap();
        let got = evaluate(
            restored.model.as_ref(),
            restored.task.eval_queries(Split::Test),
            &restored.task.filter,
            opts,
        )
        .unwrap();
        assert_eq!(got, want, "{kind} {method:?}");
        assert!(got.average.n_queries > 0);
    }
}

#[test]
fn unknown_test_label_is_a_vocabulary_mismatch() {
    let g = graph();
    let (_, ckpt) = trained(&g, ModelKind::ComplEx, Some(Method::Prune));
    let err = ckpt.restore("e0\tr0\tnever_seen\n".as_bytes(), Format::Tsv).err().unwrap();
    match &err {
        HkgError::VocabMismatch { checkpoint, data } => {
            assert_ne!(checkpoint, data);
            let msg = err.to_string();
            assert!(msg.contains(checkpoint.as_str()) && msg.contains(data.as_str()));
        }
        other => panic!("unexpected error {other}"),
    }
}
