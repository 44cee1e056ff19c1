mod common;

use std::fs;

use common::{hand_deviation, hand_matrices};
use metacal::harness::{
    dump_memory, run_experiment, RunConfig, RunResult, LOG_FILE, LOG_HEADER, MEMORY_FILE, RUN_FILE,
};
use metacal::memory::{MemoryBuffer, MemoryStrategy};
use metacal::metrics::AccuracyMatrix;
use metacal::model::ModelState;
use metacal::synthetic::SyntheticSpec;

#[test]
fn metrics_match_hand_worked_matrices() {
    for m in hand_matrices() {
        let matrix = AccuracyMatrix::from_rows(m.rows.clone(), m.test_sizes.clone()).unwrap();
        let got = matrix.summary().unwrap();
        assert!(hand_deviation(&m, &got) <= 1e-12, "{got:?}");
    }
}

#[test]
fn malformed_matrices_are_rejected() {
    assert!(AccuracyMatrix::from_rows(vec![vec![0.5, 0.5]], vec![1, 1]).is_err());
    assert!(AccuracyMatrix::from_rows(vec![vec![0.5], vec![0.5, 0.1]], vec![1]).is_err());
    let m = AccuracyMatrix::from_rows(vec![vec![0.5], vec![0.7]], vec![1]).unwrap();
    assert!(m.bwt(1).is_err());
    assert!(m.acc(2).is_err());
}

fn small_run(dir: &std::path::Path) -> RunConfig {
    let data = dir.join("data");
    SyntheticSpec {
        tasks: 2,
        classes_per_task: 3,
        pool_size: 60,
        test_size: 20,
        ..SyntheticSpec::default()
    }
    .write(&data)
    .unwrap();
    RunConfig {
        manifest: Some(data.join("manifest.json")),
        lexicon: Some(data.join("lexicon.tsv")),
        output_dir: dir.join("out"),
        budget: 12,
        input_dim: 256,
        hidden_dims: vec![32],
        inner_lr: 0.3,
        outer_lr: 1e-2,
        checkpoint_every: 2,
        ..RunConfig::default()
    }
}

#[test]
fn experiment_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run(tmp.path());
    let result = run_experiment(&cfg).unwrap();
    let out = &cfg.output_dir;

    assert_eq!(result.annotations, vec![12, 12]);
    assert_eq!(result.matrix.tasks(), 2);
    let row0 = result.matrix.get(0, 1).unwrap();
    assert!((row0 - 1.0 / 3.0).abs() < 1e-12);

    let stored: RunResult = serde_json::from_str(&fs::read_to_string(out.join(RUN_FILE)).unwrap()).unwrap();
    assert_eq!(stored, result);
    assert_eq!(stored.recompute().unwrap(), stored.metrics);

    let log = fs::read_to_string(out.join(LOG_FILE)).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    assert_eq!(lines.count(), result.episodes);

    let tsv = fs::read_to_string(out.join(MEMORY_FILE)).unwrap();
    let rows: Vec<&str> = tsv.lines().collect();
    assert!(rows[0].starts_with("id\tclass\ttask_index\tr0"));
    assert_eq!(rows[0].split('\t').count(), 3 + 32);
    // two tasks of three classes, five per class
    assert_eq!(rows.len(), 1 + 6 * 5);
    assert!(out.join("model.json").exists());
    assert!(out.join("memory.json").exists());
}

#[test]
fn empty_memory_dumps_only_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.tsv");
    dump_memory(&MemoryBuffer::new(5, MemoryStrategy::Reservoir), &ModelState::new(&[8, 3], 0), &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "id\tclass\ttask_index\tr0\tr1\tr2\n");
}

#[test]
fn missing_manifest_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output_dir: tmp.path().join("out"),
        ..RunConfig::default()
    };
    assert!(run_experiment(&cfg).is_err());
    let cfg = RunConfig {
        manifest: Some(tmp.path().join("nope.json")),
        ..cfg
    };
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn overrides_reach_every_key() {
    let cfg = RunConfig::parse(
        "",
        &[
            ("no_such_key".to_string(), "1".to_string()),
        ],
    );
    assert!(cfg.is_err());
    let cfg = RunConfig::parse(
        "budget = 5",
        &[
            ("output-dir".into(), "elsewhere".into()),
            ("hidden_dims".into(), "[4]".into()),
            ("order".into(), "[2, 1]".into()),
            ("al_strategy".into(), "div-kmeans".into()),
            ("full_supervision".into(), "true".into()),
        ],
    )
    .unwrap();
    assert_eq!(cfg.budget, 5);
    assert_eq!(cfg.output_dir, std::path::PathBuf::from("elsewhere"));
    assert_eq!(cfg.hidden_dims, vec![4]);
    assert_eq!(cfg.order, Some(vec![2, 1]));
    assert!(cfg.full_supervision);
}
