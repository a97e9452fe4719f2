//! Supervised fine-tuning of a transferred (or fresh) classifier.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;

use crate::datagen::LabeledSample;
use crate::error::{Error, Result};
use crate::metrics::{confusion, overall, ConfusionMatrix};
use crate::models::{transfer_encoder, Classifier, ModelBundle};
use crate::nn::{recalibrate_batchnorm, softmax_cross_entropy, AdamConfig, AdamState, Mode, Module, Tensor};
use crate::rng::{derive_seed, stream};
use crate::ssl::{epoch_batches, feature_batch};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl FinetuneConfig {
    /// 50 epochs for a pre-trained encoder.
    pub fn finetune_default(seed: u64) -> Self {
        FinetuneConfig {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            seed,
        }
    }

    /// 200 epochs for the from-scratch baseline.
    pub fn supervised_default(seed: u64) -> Self {
        FinetuneConfig {
            epochs: 200,
            ..Self::finetune_default(seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochScore {
    /// 0 is the model before any update.
    pub epoch: usize,
    pub val_macro_f1: f64,
    pub val_accuracy: f64,
    /// Mean training cross-entropy of the epoch (NaN for epoch 0).
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    /// Classifier at the best validation epoch.
    pub classifier: Classifier,
    pub trace: Vec<EpochScore>,
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

impl FinetuneResult {
    pub fn best(&self) -> &EpochScore {
        &self.trace[self.best_epoch]
    }

    /// CSV with header `epoch,val_f1,val_accuracy,train_loss`.
    pub fn write_trace_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,val_f1,val_accuracy,train_loss")?;
        for s in &self.trace {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6}",
                s.epoch, s.val_macro_f1, s.val_accuracy, s.train_loss
            )?;
        }
        Ok(())
    }
}

/// Predicted class per sample, evaluated in parallel chunks.
pub fn predict(classifier: &Classifier, samples: &[LabeledSample]) -> Result<Vec<usize>> {
    let chunks: Vec<Vec<usize>> = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let rows: Vec<&[f64]> = chunk.iter().map(|s| s.feature.values.as_slice()).collect();
            classifier.predict(&feature_batch(&rows)?)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn evaluate(
    classifier: &Classifier,
    samples: &[LabeledSample],
    class_names: Vec<String>,
) -> Result<ConfusionMatrix> {
    let pred = predict(classifier, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    confusion(&pred, &labels, class_names)
}

/// Mean cross-entropy of `classifier` on `samples` in evaluation mode.
pub fn dataset_loss(classifier: &Classifier, samples: &[LabeledSample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let rows: Vec<&[f64]> = chunk.iter().map(|s| s.feature.values.as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let logits = classifier.infer(&feature_batch(&rows)?)?;
        total += softmax_cross_entropy(&logits, &labels)?.0.loss * chunk.len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// The classifier a run starts from: the pre-trained encoder with a fresh
/// head, or (no bundle) a freshly initialized network.
pub fn initial_classifier(pretrained: Option<&ModelBundle>, k: usize, seed: u64) -> Result<Classifier> {
    match pretrained {
        Some(b) => transfer_encoder(b, k, derive_seed(seed, "head")),
        None => Classifier::new(k, derive_seed(seed, "supervised")),
    }
}

fn check_inputs(low_shot: &[LabeledSample], validation: &[LabeledSample], k: usize) -> Result<Vec<String>> {
    if let Some(s) = low_shot.iter().chain(validation).find(|s| s.label >= k) {
        return Err(Error::Input(format!("label {} out of range for {k} classes", s.label)));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let present: BTreeSet<usize> = low_shot.iter().map(|s| s.label).collect();
    if present.len() < 2 {
        return Err(Error::Config(format!(
            "low-shot set must cover at least 2 classes, got {}",
            present.len()
        )));
    }
    let missing: Vec<usize> = (0..k).filter(|c| !present.contains(c)).collect();
    let mut warnings = Vec::new();
    if !missing.is_empty() {
        let w = format!("classes {missing:?} have no low-shot samples");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(warnings)
}

/// Trains every classifier parameter on `low_shot` with cross-entropy and
/// returns the model with the best validation macro F1 (earliest epoch on
/// ties, epoch 0 included).
pub fn finetune(
    pretrained: Option<&ModelBundle>,
    low_shot: &[LabeledSample],
    validation: &[LabeledSample],
    k: usize,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    let warnings = check_inputs(low_shot, validation, k)?;
    if cfg.batch_size < 2 {
        return Err(Error::Config("fine-tuning batch size must be at least 2".into()));
    }
    if low_shot.len() < 2 {
        return Err(Error::Config("low-shot set needs at least 2 samples".into()));
    }
    let mut model = initial_classifier(pretrained, k, cfg.seed)?;
    let names = crate::metrics::default_class_names(k);
    let score = |m: &Classifier, epoch: usize, train_loss: f64| -> Result<EpochScore> {
        let o = overall(&evaluate(m, validation, names.clone())?);
        Ok(EpochScore {
            epoch,
            val_macro_f1: o.macro_f1,
            val_accuracy: o.accuracy,
            train_loss,
        })
    };

    // batchnorm statistics are recomputed on the training set before each
    // evaluation; running averages lag badly when an epoch is one batch
    let calibration: Vec<Tensor> = low_shot
        .chunks(cfg.batch_size)
        .filter(|c| c.len() > 1)
        .map(|c| feature_batch(&c.iter().map(|s| s.feature.values.as_slice()).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    recalibrate_batchnorm(&mut model, &calibration)?;
    let mut trace = vec![score(&model, 0, f64::NAN)?];
    let mut best = (0, model.clone());
    let mut opt = AdamState::for_params(AdamConfig::with_lr(cfg.lr), &model.params_mut());
    let mut rng = stream(cfg.seed, "finetune-shuffle");
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(low_shot.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| low_shot[i].feature.values.as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| low_shot[i].label).collect();
            let logits = model.forward(&feature_batch(&rows)?, Mode::Train)?;
            let (ce, grad) = softmax_cross_entropy(&logits, &labels).map_err(|e| match e {
                Error::Numeric(_) => Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !ce.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    loss: ce.loss,
                });
            }
            model.backward(&grad)?;
            opt.step(&mut model.params_mut())?;
            model.zero_grad();
            total += ce.loss;
        }
        recalibrate_batchnorm(&mut model, &calibration)?;
        let s = score(&model, epoch, total / batches.len() as f64)?;
        if s.val_macro_f1 > trace[best.0].val_macro_f1 {
            best = (epoch, model.clone());
        }
        trace.push(s);
    }
    Ok(FinetuneResult {
        classifier: best.1,
        trace,
        best_epoch: best.0,
        warnings,
    })
}
