use shmssl::datagen::{case_counts, gen_dataset, Case, LabeledSample};
use shmssl::finetune::{dataset_loss, finetune, initial_classifier, FinetuneConfig};
use shmssl::models::{load_checkpoint, save_checkpoint, Method};
use shmssl::reduction::FeatureVector;
use shmssl::ssl::{pretrain, PretrainConfig};
use shmssl::Error;

fn data(per_class: usize, seed: u64) -> Vec<LabeledSample> {
    gen_dataset(Case::Two, &case_counts(Case::Two, &[per_class; 5]).unwrap(), seed).unwrap()
}

fn features(s: &[LabeledSample]) -> Vec<FeatureVector> {
    s.iter().map(|s| s.feature.clone()).collect()
}

fn quick(method: Method, epochs: usize) -> PretrainConfig {
    PretrainConfig {
        epochs,
        batch_size: 16,
        ..PretrainConfig::new(method, 4)
    }
}

#[test]
fn every_method_lowers_its_loss() {
    let pool = features(&data(8, 1));
    for m in [Method::Ae, Method::Simclr, Method::Mixup, Method::Gan] {
        let (_, trace) = pretrain(&pool, &quick(m, 6)).unwrap();
        assert_eq!(trace.losses.len(), 6);
        assert!(trace.losses.iter().all(|l| l.is_finite()), "{m:?}");
        assert!(trace.last().unwrap() < trace.first().unwrap(), "{m:?}: {:?}", trace.losses);
    }
}

#[test]
fn pretraining_is_deterministic_and_round_trips() {
    let pool = features(&data(4, 2));
    let (a, ta) = pretrain(&pool, &quick(Method::Simclr, 2)).unwrap();
    let (b, tb) = pretrain(&pool, &quick(Method::Simclr, 2)).unwrap();
    assert_eq!(ta, tb);
    assert!(a.same_parameters(&b));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&a, &path).unwrap();
    assert!(load_checkpoint(&path).unwrap().same_parameters(&a));
}

#[test]
fn sup_has_no_pretraining() {
    let pool = features(&data(2, 3));
    assert!(matches!(pretrain(&pool, &quick(Method::Sup, 1)), Err(Error::Config(_))));
}

#[test]
fn finetune_trace_and_best_epoch() {
    let train = data(6, 4);
    let val = data(4, 5);
    let pool = features(&train);
    let (bundle, _) = pretrain(&pool, &quick(Method::Ae, 2)).unwrap();
    let cfg = FinetuneConfig {
        epochs: 5,
        batch_size: 16,
        ..FinetuneConfig::finetune_default(9)
    };
    let r = finetune(Some(&bundle), &train, &val, 5, &cfg).unwrap();
    assert_eq!(r.trace.len(), 6);
    assert_eq!(r.trace[0].epoch, 0);
    let best = r.trace.iter().map(|s| s.val_macro_f1).fold(f64::NEG_INFINITY, f64::max);
    let first = r.trace.iter().position(|s| s.val_macro_f1 == best).unwrap();
    assert_eq!(r.best_epoch, first);
    assert!(r.warnings.is_empty());

    let again = finetune(Some(&bundle), &train, &val, 5, &cfg).unwrap();
    let csv = |r: &shmssl::finetune::FinetuneResult| {
        let mut v = Vec::new();
        r.write_trace_csv(&mut v).unwrap();
        v
    };
    assert_eq!(csv(&again), csv(&r));
}

#[test]
fn zero_epochs_keeps_the_initial_model() {
    let train = data(3, 6);
    let val = data(2, 7);
    let cfg = FinetuneConfig {
        epochs: 0,
        ..FinetuneConfig::supervised_default(1)
    };
    let r = finetune(None, &train, &val, 5, &cfg).unwrap();
    assert_eq!((r.trace.len(), r.best_epoch), (1, 0));
}

#[test]
fn training_lowers_cross_entropy_on_the_training_set() {
    let train = data(6, 8);
    let val = data(2, 9);
    let cfg = FinetuneConfig {
        epochs: 15,
        batch_size: 16,
        ..FinetuneConfig::supervised_default(2)
    };
    let r = finetune(None, &train, &val, 5, &cfg).unwrap();
    let losses: Vec<f64> = r.trace[1..].iter().map(|s| s.train_loss).collect();
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
    let start = initial_classifier(None, 5, cfg.seed).unwrap();
    assert!(dataset_loss(&r.classifier, &train).unwrap().is_finite());
    assert!(dataset_loss(&start, &train).unwrap().is_finite());
}

#[test]
fn missing_classes_warn_and_bad_labels_fail() {
    let mut train = data(3, 10);
    train.retain(|s| s.label != 4);
    let val = data(2, 11);
    let cfg = FinetuneConfig {
        epochs: 1,
        ..FinetuneConfig::supervised_default(3)
    };
    let r = finetune(None, &train, &val, 5, &cfg).unwrap();
    assert_eq!(r.warnings.len(), 1);
    assert!(r.warnings[0].contains('4'));

    let mut bad = data(2, 12);
    bad[0].label = 5;
    assert!(matches!(finetune(None, &bad, &val, 5, &cfg), Err(Error::Input(_))));
}
