//! Self-supervised pre-training of the encoder.

mod augment;
mod losses;

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

pub use augment::{
    augment_view, crop_resize, mix, mixup_augment, sample_lambda, simclr_augment, AugmentationConfig,
};
pub use losses::{
    ae_loss, cosine_sim, discriminator_loss, gan_loss, generator_loss, mixup_loss, simclr_loss, MixupLoss,
    SimclrLoss,
};

use crate::error::{Error, Result};
use crate::models::{Method, ModelBundle, INPUT_LEN, LATENT_DIM, PROJECTION_DIM};
use crate::nn::{AdamConfig, AdamState, Mode, Module, Tensor};
use crate::reduction::FeatureVector;
use crate::rng::{stream, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub augment: AugmentationConfig,
    pub seed: u64,
}

impl PretrainConfig {
    /// Defaults for `method`: 200 epochs, batch 64, lr 1e-3, and temperature
    /// 0.5 (SimCLR) or 0.1 (Mixup).
    pub fn new(method: Method, seed: u64) -> Self {
        PretrainConfig {
            method,
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            temperature: default_temperature(method),
            augment: AugmentationConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Sup {
            return Err(Error::Config("the supervised baseline has no pre-training stage".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("pre-training epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("pre-training batch size must be at least 2".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.augment.validate()
    }
}

pub fn default_temperature(method: Method) -> f64 {
    match method {
        Method::Mixup => 0.1,
        _ => 0.5,
    }
}

/// Batch-mean pre-training loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub method: Method,
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// CSV with header `epoch,method,loss`; epochs count from 1.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,method,loss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(w, "{},{},{:.10}", i + 1, self.method, l)?;
        }
        Ok(())
    }
}

pub(crate) fn feature_batch(rows: &[&[f64]]) -> Result<Tensor> {
    if let Some(r) = rows.iter().find(|r| r.len() != INPUT_LEN) {
        return Err(Error::dimension("feature batch", INPUT_LEN, r.len()));
    }
    Tensor::batch_1d(rows)
}

/// Shuffled minibatches of indices; a trailing batch of one sample is
/// dropped since batchnorm cannot normalize it.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() > 1)
        .map(<[usize]>::to_vec)
        .collect()
}

fn optimizer<M: Module>(m: &mut M, lr: f64) -> AdamState {
    AdamState::for_params(AdamConfig::with_lr(lr), &m.params_mut())
}

fn step<M: Module>(m: &mut M, opt: &mut AdamState) -> Result<()> {
    opt.step(&mut m.params_mut())?;
    m.zero_grad();
    Ok(())
}

fn split_rows(t: &Tensor, at: usize) -> Result<(Tensor, Tensor)> {
    let (b, d) = (t.shape()[0], t.shape()[1]);
    let (a, c) = t.data().split_at(at * d);
    Ok((
        Tensor::new(vec![at, d], a.to_vec())?,
        Tensor::new(vec![b - at, d], c.to_vec())?,
    ))
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    Tensor::new(shape, data)
}

struct Trainer<'a> {
    data: &'a [FeatureVector],
    cfg: &'a PretrainConfig,
    bundle: ModelBundle,
    aug_rng: SeededRng,
    opts: Vec<AdamState>,
}

impl Trainer<'_> {
    fn rows(&self, idx: &[usize]) -> Vec<&[f64]> {
        idx.iter().map(|&i| self.data[i].values.as_slice()).collect()
    }

    fn ae_step(&mut self, idx: &[usize]) -> Result<f64> {
        let x = feature_batch(&self.rows(idx))?;
        let enc = self.bundle.encoder.as_mut().expect("ae bundle has an encoder");
        let dec = self.bundle.decoder.as_mut().expect("ae bundle has a decoder");
        let h = enc.forward(&x, Mode::Train)?;
        let x_hat = dec.forward(&h, Mode::Train)?;
        let (loss, dx) = ae_loss(&x_hat, &x)?;
        let dh = dec.backward(&dx)?;
        enc.backward(&dh)?;
        step(enc, &mut self.opts[0])?;
        step(dec, &mut self.opts[1])?;
        Ok(loss)
    }

    fn simclr_step(&mut self, idx: &[usize]) -> Result<f64> {
        let b = idx.len();
        let mut v1 = Vec::with_capacity(b);
        let mut v2 = Vec::with_capacity(b);
        for &i in idx {
            let (a, c) = simclr_augment(&self.data[i].values, &self.cfg.augment, &mut self.aug_rng);
            v1.push(a);
            v2.push(c);
        }
        let rows: Vec<&[f64]> = v1.iter().chain(&v2).map(Vec::as_slice).collect();
        let x = feature_batch(&rows)?;
        let enc = self.bundle.encoder.as_mut().expect("simclr bundle has an encoder");
        let proj = self.bundle.projector.as_mut().expect("simclr bundle has a projector");
        let z = proj.forward(&enc.forward(&x, Mode::Train)?, Mode::Train)?;
        let (z1, z2) = split_rows(&z, b)?;
        let out = simclr_loss(&z1, &z2, self.cfg.temperature)?;
        let dz = concat_rows(&out.grad_z1, &out.grad_z2)?;
        let dh = proj.backward(&dz)?;
        enc.backward(&dh)?;
        step(enc, &mut self.opts[0])?;
        step(proj, &mut self.opts[1])?;
        Ok(out.loss)
    }

    fn mixup_step(&mut self, idx: &[usize]) -> Result<f64> {
        let b = idx.len();
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut self.aug_rng);
        let mut lambdas = Vec::with_capacity(b);
        let mut mixed = Vec::with_capacity(b);
        for j in 0..b {
            let x1 = &self.data[idx[j]].values;
            let x2 = &self.data[idx[perm[j]]].values;
            let (m, l) = mixup_augment(x1, x2, self.cfg.augment.mixup_alpha, &mut self.aug_rng)?;
            mixed.push(m);
            lambdas.push(l);
        }
        let mut rows = self.rows(idx);
        rows.extend(mixed.iter().map(Vec::as_slice));
        let x = feature_batch(&rows)?;
        let enc = self.bundle.encoder.as_mut().expect("mixup bundle has an encoder");
        let proj = self.bundle.projector.as_mut().expect("mixup bundle has a projector");
        let z = proj.forward(&enc.forward(&x, Mode::Train)?, Mode::Train)?;
        let (z1, zm) = split_rows(&z, b)?;
        let d = PROJECTION_DIM;
        let z2_data: Vec<f64> = perm.iter().flat_map(|&p| z1.row(p).to_vec()).collect();
        let z2 = Tensor::new(vec![b, d], z2_data)?;
        let out = mixup_loss(&z1, &zm, &z2, &lambdas, self.cfg.temperature)?;
        // z2 is a row permutation of z1, so its gradient scatters back
        let mut dz1 = out.grad_z1.clone();
        for (j, &p) in perm.iter().enumerate() {
            let g = out.grad_z2.row(j).to_vec();
            dz1.data_mut()[p * d..(p + 1) * d]
                .iter_mut()
                .zip(g)
                .for_each(|(a, g)| *a += g);
        }
        let dz = concat_rows(&dz1, &out.grad_mixed)?;
        let dh = proj.backward(&dz)?;
        enc.backward(&dh)?;
        step(enc, &mut self.opts[0])?;
        step(proj, &mut self.opts[1])?;
        Ok(out.loss)
    }

    fn gan_step(&mut self, idx: &[usize]) -> Result<f64> {
        let b = idx.len();
        let x = feature_batch(&self.rows(idx))?;
        let noise_data: Vec<f64> = (0..b * LATENT_DIM)
            .map(|_| StandardNormal.sample(&mut self.aug_rng))
            .collect();
        let noise = Tensor::new(vec![b, LATENT_DIM, 1], noise_data)?;
        let gen = self.bundle.generator.as_mut().expect("gan bundle has a generator");
        let disc = self.bundle.discriminator.as_mut().expect("gan bundle has a discriminator");

        // discriminator step; real and fake passes run one after the other
        // because each layer caches only its latest forward
        let fake = gen.forward(&noise, Mode::Train)?;
        let real_logits = disc.forward(&x, Mode::Train)?;
        // d/dl of -ln D(x) is the same expression as the generator's
        let (_, d_real) = generator_loss(&real_logits)?;
        disc.backward(&d_real)?;
        let fake_logits = disc.forward(&fake, Mode::Train)?;
        let (loss_d, _, d_fake) = discriminator_loss(&real_logits, &fake_logits)?;
        disc.backward(&d_fake)?;
        step(disc, &mut self.opts[1])?;

        // generator step through the updated discriminator
        let fake = gen.forward(&noise, Mode::Train)?;
        let logits = disc.forward(&fake, Mode::Train)?;
        let (_, dl) = generator_loss(&logits)?;
        let dfake = disc.backward(&dl)?;
        disc.zero_grad();
        gen.backward(&dfake)?;
        step(gen, &mut self.opts[0])?;
        Ok(loss_d)
    }
}

/// Pre-trains the networks of `cfg.method` on unlabeled features.
///
/// Returns the bundle (AE: encoder + decoder, SimCLR/Mixup: encoder +
/// projector, GAN: generator + discriminator) and the per-epoch loss; for
/// the GAN the traced value is the discriminator loss.
pub fn pretrain(data: &[FeatureVector], cfg: &PretrainConfig) -> Result<(ModelBundle, LossTrace)> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Config(format!(
            "pre-training needs at least 2 samples, got {}",
            data.len()
        )));
    }
    let mut bundle = ModelBundle::build(cfg.method, 2, cfg.seed)?;
    let opts = match cfg.method {
        Method::Ae => vec![
            optimizer(bundle.encoder.as_mut().expect("built"), cfg.lr),
            optimizer(bundle.decoder.as_mut().expect("built"), cfg.lr),
        ],
        Method::Simclr | Method::Mixup => vec![
            optimizer(bundle.encoder.as_mut().expect("built"), cfg.lr),
            optimizer(bundle.projector.as_mut().expect("built"), cfg.lr),
        ],
        Method::Gan => vec![
            optimizer(bundle.generator.as_mut().expect("built"), cfg.lr),
            optimizer(bundle.discriminator.as_mut().expect("built"), cfg.lr),
        ],
        Method::Sup => unreachable!("rejected by validate"),
    };
    let mut trainer = Trainer {
        data,
        cfg,
        bundle,
        aug_rng: stream(cfg.seed, "augment"),
        opts,
    };
    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(data.len(), cfg.batch_size, &mut shuffle_rng);
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let loss = match cfg.method {
                Method::Ae => trainer.ae_step(idx),
                Method::Simclr => trainer.simclr_step(idx),
                Method::Mixup => trainer.mixup_step(idx),
                Method::Gan => trainer.gan_step(idx),
                Method::Sup => unreachable!(),
            };
            let loss = match loss {
                Ok(l) if l.is_finite() => l,
                Ok(l) => {
                    return Err(Error::Divergence {
                        epoch,
                        batch: bi + 1,
                        loss: l,
                    })
                }
                Err(Error::Numeric(_)) => {
                    return Err(Error::Divergence {
                        epoch,
                        batch: bi + 1,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            total += loss;
        }
        losses.push(total / batches.len() as f64);
        log::debug!("pretrain {} epoch {epoch}: {:.6}", cfg.method, losses[epoch - 1]);
    }
    Ok((
        trainer.bundle,
        LossTrace {
            method: cfg.method,
            losses,
        },
    ))
}
