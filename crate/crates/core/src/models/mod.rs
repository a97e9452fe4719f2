//! Network definitions: encoder, decoder, projector, classifier, generator
//! and discriminator, plus the bundle that groups them per pre-training
//! method.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSpec, Mode, Module, Sequential, Tensor};
use crate::rng::stream;

pub const INPUT_LEN: usize = 512;
pub const LATENT_DIM: usize = 256;
pub const PROJECTION_DIM: usize = 128;

pub const ENCODER_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];
pub const ENCODER_KERNELS: [usize; 5] = [5, 3, 3, 3, 3];
pub const ENCODER_STRIDES: [usize; 5] = [5, 3, 3, 3, 3];

pub const DECODER_CHANNELS: [usize; 5] = [128, 64, 32, 16, 1];
pub const DECODER_KERNELS: [usize; 5] = [3, 3, 3, 3, 5];
pub const DECODER_STRIDES: [usize; 5] = [3, 3, 3, 3, 5];
/// Restores the encoder's length sequence 1 -> 3 -> 11 -> 34 -> 102 -> 512.
pub const DECODER_OUTPUT_PADDING: [usize; 5] = [0, 2, 1, 0, 2];

/// Pre-training method, or `Sup` for a purely supervised classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sup,
    Ae,
    Simclr,
    Mixup,
    Gan,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Sup,
        Method::Ae,
        Method::Simclr,
        Method::Mixup,
        Method::Gan,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Sup => "sup",
            Method::Ae => "ae",
            Method::Simclr => "simclr",
            Method::Mixup => "mixup",
            Method::Gan => "gan",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Method> {
        Method::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor)>,
) -> Vec<(String, &'a mut Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// Five conv1d + batchnorm + ReLU blocks, `(B, 1, 512) -> (B, 256)`.
///
/// Convolutions carry no bias: the batchnorm that follows each one removes
/// any per-channel constant.
#[derive(Debug, Clone)]
pub struct Encoder {
    body: Sequential,
}

impl Encoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream(seed, "encoder");
        let mut layers = Vec::with_capacity(15);
        let mut cin = 1;
        for i in 0..5 {
            let cout = ENCODER_CHANNELS[i];
            let spec = LayerSpec::conv1d(cin, cout, ENCODER_KERNELS[i], ENCODER_STRIDES[i]);
            layers.push(Layer::new(spec.without_bias(), &mut rng));
            layers.push(Layer::new(LayerSpec::batchnorm1d(cout), &mut rng));
            layers.push(Layer::new(LayerSpec::Relu, &mut rng));
            cin = cout;
        }
        Encoder {
            body: Sequential::new(layers),
        }
    }

    fn check(x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != 1 || s[2] != INPUT_LEN {
            return Err(Error::dimension(
                "encoder input",
                format!("(batch, 1, {INPUT_LEN})"),
                s,
            ));
        }
        Ok(())
    }
}

impl Module for Encoder {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Self::check(x)?;
        let b = x.shape()[0];
        self.body.forward(x, mode)?.reshape(&[b, LATENT_DIM])
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Self::check(x)?;
        let b = x.shape()[0];
        self.body.infer(x)?.reshape(&[b, LATENT_DIM])
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let b = dy.shape()[0];
        self.body.backward(&dy.clone().reshape(&[b, LATENT_DIM, 1])?)
    }

    fn params(&self) -> Vec<&Tensor> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.body.params_mut()
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.body.named_tensors()
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.body.named_tensors_mut()
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        Module::layers_mut(&mut self.body)
    }
}

/// Five deconv1d + batchnorm blocks (ReLU on all but the last),
/// `(B, 256, 1) -> (B, 1, 512)`. Also serves as the GAN generator.
///
/// A `(B, 256)` input is accepted and treated as `(B, 256, 1)`.
#[derive(Debug, Clone)]
pub struct Decoder {
    body: Sequential,
    flat_input: bool,
}

impl Decoder {
    pub fn new(seed: u64) -> Self {
        Self::named(seed, "decoder")
    }

    pub fn generator(seed: u64) -> Self {
        Self::named(seed, "generator")
    }

    fn named(seed: u64, name: &str) -> Self {
        let mut rng = stream(seed, name);
        let mut layers = Vec::with_capacity(14);
        let mut cin = LATENT_DIM;
        for i in 0..5 {
            let cout = DECODER_CHANNELS[i];
            let spec = LayerSpec::deconv1d(
                cin,
                cout,
                DECODER_KERNELS[i],
                DECODER_STRIDES[i],
                DECODER_OUTPUT_PADDING[i],
            );
            layers.push(Layer::new(spec.without_bias(), &mut rng));
            layers.push(Layer::new(LayerSpec::batchnorm1d(cout), &mut rng));
            if i < 4 {
                layers.push(Layer::new(LayerSpec::Relu, &mut rng));
            }
            cin = cout;
        }
        Decoder {
            body: Sequential::new(layers),
            flat_input: false,
        }
    }

    fn as_3d(x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        match s {
            [b, LATENT_DIM] => x.clone().reshape(&[*b, LATENT_DIM, 1]),
            [_, LATENT_DIM, 1] => Ok(x.clone()),
            _ => Err(Error::dimension(
                "decoder input",
                format!("(batch, {LATENT_DIM}, 1)"),
                s,
            )),
        }
    }
}

impl Module for Decoder {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.flat_input = x.shape().len() == 2;
        self.body.forward(&Self::as_3d(x)?, mode)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.body.infer(&Self::as_3d(x)?)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let dx = self.body.backward(dy)?;
        if self.flat_input {
            let b = dx.shape()[0];
            dx.reshape(&[b, LATENT_DIM])
        } else {
            Ok(dx)
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.body.params_mut()
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.body.named_tensors()
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.body.named_tensors_mut()
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        Module::layers_mut(&mut self.body)
    }
}

/// Single linear layer 256 -> 128.
pub fn projector(seed: u64) -> Sequential {
    let mut rng = stream(seed, "projector");
    Sequential::new(vec![Layer::new(
        LayerSpec::linear(LATENT_DIM, PROJECTION_DIM),
        &mut rng,
    )])
}

/// MLP head `[256, 256, K]` with ReLU on the hidden layer.
pub fn mlp_head(k: usize, seed: u64) -> Sequential {
    let mut rng = stream(seed, "head");
    Sequential::new(vec![
        Layer::new(LayerSpec::linear(LATENT_DIM, LATENT_DIM), &mut rng),
        Layer::new(LayerSpec::Relu, &mut rng),
        Layer::new(LayerSpec::linear(LATENT_DIM, k), &mut rng),
    ])
}

/// Encoder followed by a `[256, 256, K]` MLP, emitting K logits.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: Sequential,
}

impl Classifier {
    pub fn new(k: usize, seed: u64) -> Result<Self> {
        Self::from_encoder(Encoder::new(seed), k, seed)
    }

    pub fn from_encoder(encoder: Encoder, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {k}"
            )));
        }
        Ok(Classifier {
            encoder,
            head: mlp_head(k, seed),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.params().last().map_or(0, |b| b.len())
    }

    /// Class index with the largest logit per row (evaluation mode).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.infer(x)?;
        Ok(logits
            .rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

impl Module for Classifier {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.encoder.forward(x, mode)?;
        self.head.forward(&h, mode)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.head.infer(&self.encoder.infer(x)?)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let dh = self.head.backward(dy)?;
        self.encoder.backward(&dh)
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("encoder", self.encoder.named_tensors());
        v.extend(prefixed("head", self.head.named_tensors()));
        v
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("encoder", self.encoder.named_tensors_mut());
        v.extend(prefixed_mut("head", self.head.named_tensors_mut()));
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut v = self.encoder.layers_mut();
        v.extend(self.head.layers_mut());
        v
    }
}

/// CNN encoder plus a linear 256 -> 1 unit; outputs one logit per sample.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub encoder: Encoder,
    pub head: Sequential,
}

impl Discriminator {
    pub fn new(seed: u64) -> Self {
        let dseed = crate::rng::derive_seed(seed, "discriminator");
        let mut rng = stream(dseed, "head");
        Discriminator {
            encoder: Encoder::new(dseed),
            head: Sequential::new(vec![Layer::new(LayerSpec::linear(LATENT_DIM, 1), &mut rng)]),
        }
    }
}

impl Module for Discriminator {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.encoder.forward(x, mode)?;
        self.head.forward(&h, mode)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.head.infer(&self.encoder.infer(x)?)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let dh = self.head.backward(dy)?;
        self.encoder.backward(&dh)
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("encoder", self.encoder.named_tensors());
        v.extend(prefixed("head", self.head.named_tensors()));
        v
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("encoder", self.encoder.named_tensors_mut());
        v.extend(prefixed_mut("head", self.head.named_tensors_mut()));
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut v = self.encoder.layers_mut();
        v.extend(self.head.layers_mut());
        v
    }
}

/// The networks one method trains: AE has encoder + decoder, SimCLR and
/// Mixup encoder + projector, GAN generator + discriminator, and fine-tuned
/// (or supervised) models a classifier.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub method: Method,
    pub seed: u64,
    pub encoder: Option<Encoder>,
    pub decoder: Option<Decoder>,
    pub projector: Option<Sequential>,
    pub generator: Option<Decoder>,
    pub discriminator: Option<Discriminator>,
    pub classifier: Option<Classifier>,
}

impl ModelBundle {
    pub fn empty(method: Method, seed: u64) -> Self {
        ModelBundle {
            method,
            seed,
            encoder: None,
            decoder: None,
            projector: None,
            generator: None,
            discriminator: None,
            classifier: None,
        }
    }

    /// Freshly initialized networks for `method`. `k` is only used by `Sup`.
    pub fn build(method: Method, k: usize, seed: u64) -> Result<Self> {
        let mut b = ModelBundle::empty(method, seed);
        match method {
            Method::Sup => b.classifier = Some(Classifier::new(k, seed)?),
            Method::Ae => {
                b.encoder = Some(Encoder::new(seed));
                b.decoder = Some(Decoder::new(seed));
            }
            Method::Simclr | Method::Mixup => {
                b.encoder = Some(Encoder::new(seed));
                b.projector = Some(projector(seed));
            }
            Method::Gan => {
                b.generator = Some(Decoder::generator(seed));
                b.discriminator = Some(Discriminator::new(seed));
            }
        }
        Ok(b)
    }

    /// The encoder a classifier would inherit: the bare encoder if present,
    /// else the discriminator's, else the classifier's.
    pub fn pretrained_encoder(&self) -> Option<&Encoder> {
        self.encoder
            .as_ref()
            .or(self.discriminator.as_ref().map(|d| &d.encoder))
            .or(self.classifier.as_ref().map(|c| &c.encoder))
    }

    /// All tensors, namespaced by network, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(m) = &self.encoder {
            out.extend(prefixed("encoder", m.named_tensors()));
        }
        if let Some(m) = &self.decoder {
            out.extend(prefixed("decoder", m.named_tensors()));
        }
        if let Some(m) = &self.projector {
            out.extend(prefixed("projector", m.named_tensors()));
        }
        if let Some(m) = &self.generator {
            out.extend(prefixed("generator", m.named_tensors()));
        }
        if let Some(m) = &self.discriminator {
            out.extend(prefixed("discriminator", m.named_tensors()));
        }
        if let Some(m) = &self.classifier {
            out.extend(prefixed("classifier", m.named_tensors()));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.encoder {
            out.extend(prefixed_mut("encoder", m.named_tensors_mut()));
        }
        if let Some(m) = &mut self.decoder {
            out.extend(prefixed_mut("decoder", m.named_tensors_mut()));
        }
        if let Some(m) = &mut self.projector {
            out.extend(prefixed_mut("projector", m.named_tensors_mut()));
        }
        if let Some(m) = &mut self.generator {
            out.extend(prefixed_mut("generator", m.named_tensors_mut()));
        }
        if let Some(m) = &mut self.discriminator {
            out.extend(prefixed_mut("discriminator", m.named_tensors_mut()));
        }
        if let Some(m) = &mut self.classifier {
            out.extend(prefixed_mut("classifier", m.named_tensors_mut()));
        }
        out
    }

    /// Bit-exact equality of every named tensor.
    pub fn same_parameters(&self, other: &ModelBundle) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Classifier whose encoder (weights and batchnorm running stats) is copied
/// from `pretrained`, with a fresh MLP head seeded by `head_seed`.
pub fn transfer_encoder(pretrained: &ModelBundle, k: usize, head_seed: u64) -> Result<Classifier> {
    let encoder = pretrained.pretrained_encoder().ok_or_else(|| {
        Error::Config(format!(
            "{} bundle has no encoder to transfer",
            pretrained.method
        ))
    })?;
    Classifier::from_encoder(encoder.clone(), k, head_seed)
}
