use std::fs;
use std::path::Path;

use shmssl::error::Stage;
use shmssl::harness::{run_experiment, ExperimentConfig, LowShotSpec, ResultTable};
use shmssl::datagen::Case;
use shmssl::models::{load_checkpoint, Method};
use shmssl::Error;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.scale = 0.01;
    c.methods = vec![Method::Sup, Method::Ae];
    c.low_shot = vec![LowShotSpec::parse(Case::One, "1").unwrap()];
    c.repeats = 2;
    c.pretrain_epochs = 2;
    c.finetune_epochs = 2;
    c.sup_epochs = 2;
    c.batch_size = 16;
    c.duration_s = 600.0;
    c.seed = 11;
    c.out_dir = out.to_path_buf();
    c
}

#[test]
fn end_to_end_structure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&tiny(dir.path())).unwrap();
    let summaries = out.table.summaries();
    assert_eq!(summaries.len(), 2);
    assert!(summaries.iter().all(|s| s.repeats == 2));
    assert_eq!(out.pretrain_traces.len(), 1);
    assert_eq!(out.pretrain_traces[0].losses.len(), 2);

    for f in [
        "config.txt",
        "data/dataset.ierfh",
        "data/test.ierfh",
        "data/lowshot_1-1-1-1-1-1.ierfh",
        "checkpoints/pretrain_ae.ckpt",
        "checkpoints/best_sup_1-1-1-1-1-1.ckpt",
        "traces/pretrain_ae.csv",
        "traces/finetune_ae_1-1-1-1-1-1_r1.csv",
        "report/results.csv",
        "report/f1_table.csv",
        "report/runs.csv",
        "report/confusion_ae_1-1-1-1-1-1.csv",
        "report/per_class_sup_1-1-1-1-1-1.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let best = load_checkpoint(dir.path().join("checkpoints/best_ae_1-1-1-1-1-1.ckpt")).unwrap();
    assert_eq!(best.classifier.unwrap().num_classes(), 6);

    // the report subcommand path: runs.csv alone rebuilds the table
    let back = ResultTable::load_runs(dir.path().join("report/runs.csv")).unwrap();
    assert_eq!(back, out.table);
}

#[test]
fn single_repeat_has_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.methods = vec![Method::Sup];
    cfg.repeats = 1;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.table.summaries()[0].std_f1, 0.0);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&tiny(a.path())).unwrap();
    run_experiment(&tiny(b.path())).unwrap();
    for f in &ra.report_files {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join("report").join(name)).unwrap());
    }
    assert_eq!(
        fs::read(a.path().join("checkpoints/pretrain_ae.ckpt")).unwrap(),
        fs::read(b.path().join("checkpoints/pretrain_ae.ckpt")).unwrap()
    );
}

#[test]
fn stage_errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.low_shot = vec![LowShotSpec::parse(Case::One, "40").unwrap()];
    match run_experiment(&cfg).unwrap_err() {
        Error::Stage { stage, method, source, .. } => {
            assert_eq!(stage, Stage::Split);
            assert_eq!(method, "-");
            assert!(matches!(*source, Error::Config(ref m) if m.contains("normal")), "{source}");
        }
        other => panic!("unexpected {other}"),
    }
    // the generate stage completed before the failure and stays on disk
    assert!(dir.path().join("data/dataset.ierfh").is_file());
}
