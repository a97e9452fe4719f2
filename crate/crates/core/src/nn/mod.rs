//! Minimal differentiable core: tensors, layers with explicit backward
//! passes, loss primitives, Adam and finite-difference gradient checking.

mod gradcheck;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use gradcheck::{
    finite_difference_check, gradient_check, input_gradient_check, GradCheck, FD_STEP,
};
pub use layers::{Layer, LayerSpec, Mode, BN_EPS, BN_MOMENTUM};
pub use loss::{
    cross_entropy, log_sigmoid, mse_loss, sigmoid, softmax, softmax_cross_entropy, CrossEntropy,
    PROB_FLOOR,
};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;

use crate::error::Result;

/// A differentiable network fragment.
pub trait Module {
    /// Forward pass; in training mode caches state for `backward`.
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Evaluation-mode forward pass without side effects.
    fn infer(&self, x: &Tensor) -> Result<Tensor>;

    /// Backward pass from the most recent training-mode forward.
    fn backward(&mut self, dy: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Parameters plus buffers (batchnorm running stats), named.
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Every primitive layer, in forward order.
    fn layers_mut(&mut self) -> Vec<&mut Layer>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl Module for Layer {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Layer::forward(self, x, mode)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Layer::infer(self, x)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        Layer::backward(self, dy)
    }

    fn params(&self) -> Vec<&Tensor> {
        Layer::params(self).iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Layer::params_mut(self).iter_mut().collect()
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        Layer::named_tensors(self)
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Layer::named_tensors_mut(self)
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        vec![self]
    }
}

/// Layers applied in order.
#[derive(Debug, Clone)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

impl Module for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params().iter()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().iter_mut())
            .collect()
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.named_tensors()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{n}"), t))
            })
            .collect()
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.named_tensors_mut()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{n}"), t))
            })
            .collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        self.layers.iter_mut().collect()
    }
}

/// Replaces every batchnorm layer's running statistics with the equally
/// weighted average of the batch statistics of `batches` under the current
/// weights. Parameters are untouched.
pub fn recalibrate_batchnorm<M: Module>(module: &mut M, batches: &[Tensor]) -> Result<()> {
    let mut saved = Vec::new();
    for layer in module.layers_mut() {
        if layer.is_batchnorm() {
            layer.reset_running_stats();
            saved.push(layer.set_momentum(1.0));
        }
    }
    for (t, x) in batches.iter().enumerate() {
        for layer in module.layers_mut().into_iter().filter(|l| l.is_batchnorm()) {
            layer.set_momentum(1.0 / (t + 1) as f64);
        }
        module.forward(x, Mode::Train)?;
    }
    let mut saved = saved.into_iter();
    for layer in module.layers_mut() {
        layer.clear_cache();
        if layer.is_batchnorm() {
            if let Some(Some(m)) = saved.next() {
                layer.set_momentum(m);
            }
        }
    }
    Ok(())
}
