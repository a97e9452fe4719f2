//! Experiment orchestration: generate, split, pre-train, fine-tune,
//! evaluate and report.

mod config;
mod report;
mod split;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::*;
pub use report::*;
pub use split::*;

use crate::datagen::{case_counts, gen_dataset_with, LabeledSample};
use crate::error::{Error, Result, Stage};
use crate::features::{save_features, FeatureRecord};
use crate::finetune::{evaluate, finetune, FinetuneConfig};
use crate::models::{save_checkpoint, Method, ModelBundle};
use crate::rng::{derive_indexed, derive_seed};
use crate::ssl::{pretrain, LossTrace, PretrainConfig};

/// Wraps errors of one pipeline stage with its context.
pub fn at_stage(stage: Stage, method: &str, seed: u64) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        already @ Error::Stage { .. } => already,
        source => Error::Stage {
            stage,
            method: method.to_string(),
            seed,
            source: Box::new(source),
        },
    }
}

pub fn samples_to_records(samples: &[LabeledSample]) -> Vec<FeatureRecord> {
    samples
        .iter()
        .map(|s| FeatureRecord {
            feature: s.feature.clone(),
            label: Some(s.label),
        })
        .collect()
}

/// Rejects unlabeled rows and labels outside `0..k`.
pub fn records_to_samples(records: Vec<FeatureRecord>, k: usize) -> Result<Vec<LabeledSample>> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r.label {
            Some(label) if label < k => Ok(LabeledSample {
                feature: r.feature,
                label,
            }),
            Some(label) => Err(Error::Input(format!("row {i}: label {label} out of range for {k} classes"))),
            None => Err(Error::MissingData(format!("row {i} has no label"))),
        })
        .collect()
}

/// The synthetic dataset for `cfg` (case, scale, segment options).
pub fn generate(cfg: &ExperimentConfig) -> Result<Vec<LabeledSample>> {
    let counts = case_counts(cfg.case, &cfg.case.scaled_counts(cfg.scale))?;
    gen_dataset_with(cfg.case, &counts, derive_seed(cfg.seed, "data"), &cfg.gen_options())
}

pub fn pretrain_config(cfg: &ExperimentConfig, method: Method) -> PretrainConfig {
    PretrainConfig {
        method,
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        temperature: match method {
            Method::Mixup => cfg.mixup_temperature,
            _ => cfg.simclr_temperature,
        },
        augment: cfg.augment.clone(),
        seed: derive_seed(cfg.seed, &format!("pretrain-{method}")),
    }
}

pub fn finetune_config(cfg: &ExperimentConfig, method: Method, repeat: usize) -> FinetuneConfig {
    FinetuneConfig {
        epochs: if method == Method::Sup {
            cfg.sup_epochs
        } else {
            cfg.finetune_epochs
        },
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: derive_indexed(cfg.seed, &format!("finetune-{method}"), repeat as u64),
    }
}

pub fn low_shot_seed(cfg: &ExperimentConfig, spec: &LowShotSpec) -> u64 {
    derive_seed(cfg.seed, &format!("low-shot-{}", spec.name))
}

/// Output locations under the run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    fn create(&self) -> Result<()> {
        for d in [self.data(), self.checkpoints(), self.traces(), self.report()] {
            fs::create_dir_all(d)?;
        }
        Ok(())
    }
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// The generated dataset, its split and the drawn low-shot sets.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub samples: Vec<LabeledSample>,
    pub split: Split,
    pub low_shot_sets: Vec<(LowShotSpec, Vec<LabeledSample>)>,
}

/// Generates, splits and draws the low-shot sets, saving each as an
/// `.ierfh` file under `data/`.
pub fn prepare_data(cfg: &ExperimentConfig, layout: &Layout) -> Result<PreparedData> {
    let names = cfg.class_names();
    let data_seed = derive_seed(cfg.seed, "data");
    let samples = generate(cfg)
        .and_then(|s| {
            fs::create_dir_all(layout.data())?;
            save_features(&samples_to_records(&s), layout.data().join("dataset.ierfh"))?;
            Ok(s)
        })
        .map_err(at_stage(Stage::Generate, "-", data_seed))?;
    log::info!("generated {} samples", samples.len());

    let split_seed = derive_seed(cfg.seed, "split");
    let split = split_dataset(&samples, cfg.split, split_seed).map_err(at_stage(Stage::Split, "-", split_seed))?;
    let mut low_shot_sets = Vec::new();
    for spec in &cfg.low_shot {
        let s = low_shot_seed(cfg, spec);
        let set = draw_low_shot(&split.label, &spec.counts, &names, s).map_err(at_stage(Stage::Split, "-", s))?;
        low_shot_sets.push((spec.clone(), set));
    }
    let save = |name: &str, set: &[LabeledSample]| save_features(&samples_to_records(set), layout.data().join(name));
    (|| -> Result<()> {
        save("label.ierfh", &split.label)?;
        save("validation.ierfh", &split.validation)?;
        save("test.ierfh", &split.test)?;
        for (spec, set) in &low_shot_sets {
            save(&format!("lowshot_{spec}.ierfh"), set)?;
        }
        Ok(())
    })()
    .map_err(at_stage(Stage::Split, "-", split_seed))?;
    Ok(PreparedData {
        samples,
        split,
        low_shot_sets,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub pretrain_traces: Vec<LossTrace>,
    pub warnings: Vec<String>,
    pub report_files: Vec<PathBuf>,
}

struct Repeat {
    record: RunRecord,
    bundle: ModelBundle,
    warnings: Vec<String>,
}

/// Full pipeline. Per method: pre-train once (SUP skips this), then for each
/// low-shot set and repeat fine-tune, pick the best validation epoch and
/// evaluate on the test split. Artifacts land under `cfg.out_dir` as each
/// stage completes; a failing stage returns [`Error::Stage`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let seed = cfg.seed;
    layout.create().map_err(at_stage(Stage::Generate, "-", seed))?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())
        .map_err(Error::from)
        .map_err(at_stage(Stage::Generate, "-", seed))?;
    let names = cfg.class_names();
    let k = names.len();

    let PreparedData {
        samples,
        split,
        low_shot_sets,
    } = prepare_data(cfg, &layout)?;

    let pool: Vec<_> = if cfg.paper_pool {
        samples.iter().map(|s| s.feature.clone()).collect()
    } else {
        split.label.iter().chain(&split.validation).map(|s| s.feature.clone()).collect()
    };

    let mut runs = Vec::new();
    let mut traces = Vec::new();
    let mut warnings = Vec::new();
    for &method in &cfg.methods {
        let tag = method.tag();
        let pretrained = if method == Method::Sup {
            None
        } else {
            let pc = pretrain_config(cfg, method);
            log::info!("pre-training {tag} on {} samples", pool.len());
            let (bundle, trace) = pretrain(&pool, &pc)
                .and_then(|(b, t)| {
                    save_checkpoint(&b, layout.checkpoints().join(format!("pretrain_{tag}.ckpt")))?;
                    write_with(&layout.traces().join(format!("pretrain_{tag}.csv")), |w| t.write_csv(w))?;
                    Ok((b, t))
                })
                .map_err(at_stage(Stage::Pretrain, tag, pc.seed))?;
            traces.push(trace);
            Some(bundle)
        };

        for (spec, set) in &low_shot_sets {
            let results: Vec<Repeat> = (0..cfg.repeats)
                .into_par_iter()
                .map(|r| {
                    let fc = finetune_config(cfg, method, r);
                    let res = finetune(pretrained.as_ref(), set, &split.validation, k, &fc)
                        .and_then(|res| {
                            write_with(&layout.traces().join(format!("finetune_{tag}_{spec}_r{r}.csv")), |w| {
                                res.write_trace_csv(w)
                            })?;
                            Ok(res)
                        })
                        .map_err(at_stage(Stage::Finetune, tag, fc.seed))?;
                    let confusion = evaluate(&res.classifier, &split.test, names.clone())
                        .map_err(at_stage(Stage::Evaluate, tag, fc.seed))?;
                    let mut bundle = ModelBundle::empty(method, fc.seed);
                    bundle.classifier = Some(res.classifier);
                    if cfg.save_finetuned {
                        save_checkpoint(&bundle, layout.checkpoints().join(format!("finetune_{tag}_{spec}_r{r}.ckpt")))
                            .map_err(at_stage(Stage::Finetune, tag, fc.seed))?;
                    }
                    Ok(Repeat {
                        record: RunRecord {
                            method,
                            low_shot: spec.name.clone(),
                            repeat: r,
                            seed: fc.seed,
                            best_epoch: res.best_epoch,
                            confusion,
                        },
                        bundle,
                        warnings: res.warnings,
                    })
                })
                .collect::<Result<_>>()?;

            let best = results
                .iter()
                .fold(None, |best: Option<&Repeat>, r| match best {
                    Some(b) if b.record.macro_f1() >= r.record.macro_f1() => Some(b),
                    _ => Some(r),
                })
                .expect("repeats >= 1");
            save_checkpoint(&best.bundle, layout.checkpoints().join(format!("best_{tag}_{spec}.ckpt")))
                .map_err(at_stage(Stage::Finetune, tag, best.record.seed))?;
            for r in results {
                log::info!(
                    "{tag} {spec} repeat {}: test macro F1 {:.4}",
                    r.record.repeat,
                    r.record.macro_f1()
                );
                warnings.extend(r.warnings.into_iter().map(|w| format!("{tag} {spec} r{}: {w}", r.record.repeat)));
                runs.push(r.record);
            }
        }
    }

    let table = ResultTable::from_runs(runs).map_err(at_stage(Stage::Report, "-", seed))?;
    let report_files = emit_report(&table, layout.report()).map_err(at_stage(Stage::Report, "-", seed))?;
    Ok(ExperimentOutput {
        table,
        pretrain_traces: traces,
        warnings,
        report_files,
    })
}
