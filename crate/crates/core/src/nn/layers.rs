//! Layers with hand-written backward passes.
//!
//! Activations are laid out `(batch, channels, length)` for the convolutional
//! and normalization layers and `(batch, features)` for `Linear`. `ReLU`
//! accepts any shape.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    },
    Deconv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        output_padding: usize,
        bias: bool,
    },
    BatchNorm1d {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Relu,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv1d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            bias: true,
        }
    }

    pub fn deconv1d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        output_padding: usize,
    ) -> Self {
        LayerSpec::Deconv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            output_padding,
            bias: true,
        }
    }

    pub fn batchnorm1d(channels: usize) -> Self {
        LayerSpec::BatchNorm1d {
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
        }
    }

    /// Drops the bias of a (de)convolution, e.g. when batchnorm follows.
    pub fn without_bias(self) -> Self {
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                bias: false,
            },
            LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                output_padding,
                ..
            } => LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                output_padding,
                bias: false,
            },
            other => other,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Deconv1d { .. } => "deconv1d",
            LayerSpec::BatchNorm1d { .. } => "batchnorm1d",
            LayerSpec::Relu => "relu",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    /// Output length along the last axis for an input of length `len_in`.
    pub fn output_len(&self, len_in: usize) -> Option<usize> {
        match *self {
            LayerSpec::Conv1d { kernel, stride, .. } => {
                (len_in >= kernel).then(|| (len_in - kernel) / stride + 1)
            }
            LayerSpec::Deconv1d {
                kernel,
                stride,
                output_padding,
                ..
            } => (len_in >= 1).then(|| (len_in - 1) * stride + kernel + output_padding),
            LayerSpec::BatchNorm1d { .. } | LayerSpec::Relu => Some(len_in),
            LayerSpec::Linear { out_features, .. } => Some(out_features),
        }
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![vec![out_channels, in_channels, kernel]];
                if bias {
                    v.push(vec![out_channels]);
                }
                v
            }
            LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![vec![in_channels, out_channels, kernel]];
                if bias {
                    v.push(vec![out_channels]);
                }
                v
            }
            LayerSpec::BatchNorm1d { channels, .. } => vec![vec![channels], vec![channels]],
            LayerSpec::Relu => vec![],
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
        }
    }

    fn param_names(&self) -> &'static [&'static str] {
        match self {
            LayerSpec::Conv1d { .. } | LayerSpec::Deconv1d { .. } | LayerSpec::Linear { .. } => {
                &["weight", "bias"]
            }
            LayerSpec::BatchNorm1d { .. } => &["weight", "bias"],
            LayerSpec::Relu => &[],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel,
            // matches the weight layout (in, out, k): fan-in is out * k
            LayerSpec::Deconv1d {
                out_channels,
                kernel,
                ..
            } => out_channels * kernel,
            LayerSpec::Linear { in_features, .. } => in_features,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        shape: [usize; 3],
    },
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Tensor>,
    running: Vec<Tensor>,
    cache: Option<Cache>,
}

impl Layer {
    /// Fan-in-scaled uniform initialization; batchnorm starts at gain 1, bias 0.
    pub fn new(spec: LayerSpec, rng: &mut SeededRng) -> Self {
        let shapes = spec.param_shapes();
        let params = match spec {
            LayerSpec::BatchNorm1d { channels, .. } => {
                vec![Tensor::filled(&[channels], 1.0), Tensor::zeros(&[channels])]
            }
            _ => {
                let bound = (1.0 / spec.fan_in() as f64).sqrt();
                shapes
                    .iter()
                    .map(|s| {
                        let mut t = Tensor::zeros(s);
                        for v in t.data_mut() {
                            *v = rng.random_range(-bound..bound);
                        }
                        t
                    })
                    .collect()
            }
        };
        let running = match spec {
            LayerSpec::BatchNorm1d { channels, .. } => {
                vec![Tensor::zeros(&[channels]), Tensor::filled(&[channels], 1.0)]
            }
            _ => vec![],
        };
        Layer {
            spec,
            params,
            running,
            cache: None,
        }
    }

    /// Layer with explicit parameters, in `weight, bias` order.
    pub fn with_params(spec: LayerSpec, params: Vec<Tensor>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::dimension(spec.kind(), shapes.len(), params.len()));
        }
        for (s, p) in shapes.iter().zip(&params) {
            p.expect_shape(spec.kind(), s)?;
        }
        let running = match spec {
            LayerSpec::BatchNorm1d { channels, .. } => {
                vec![Tensor::zeros(&[channels]), Tensor::filled(&[channels], 1.0)]
            }
            _ => vec![],
        };
        Ok(Layer {
            spec,
            params,
            running,
            cache: None,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Running mean and variance (batchnorm only).
    pub fn running_stats(&self) -> &[Tensor] {
        &self.running
    }

    /// Parameters and buffers with stable names, for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .spec
            .param_names()
            .iter()
            .zip(&self.params)
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        if self.running.len() == 2 {
            out.push(("running_mean".into(), &self.running[0]));
            out.push(("running_var".into(), &self.running[1]));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names = self.spec.param_names();
        let mut out: Vec<(String, &mut Tensor)> = names
            .iter()
            .zip(self.params.iter_mut())
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        if let [mean, var] = self.running.as_mut_slice() {
            out.push(("running_mean".into(), mean));
            out.push(("running_var".into(), var));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn is_batchnorm(&self) -> bool {
        matches!(self.spec, LayerSpec::BatchNorm1d { .. })
    }

    /// Running mean 0, running variance 1.
    pub fn reset_running_stats(&mut self) {
        if let [mean, var] = self.running.as_mut_slice() {
            mean.data_mut().fill(0.0);
            var.data_mut().fill(1.0);
        }
    }

    /// Sets a batchnorm layer's momentum, returning the previous value.
    pub fn set_momentum(&mut self, value: f64) -> Option<f64> {
        match &mut self.spec {
            LayerSpec::BatchNorm1d { momentum, .. } => Some(std::mem::replace(momentum, value)),
            _ => None,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let ok = match self.spec {
            LayerSpec::Conv1d {
                in_channels,
                kernel,
                ..
            } => s.len() == 3 && s[1] == in_channels && s[2] >= kernel,
            LayerSpec::Deconv1d { in_channels, .. } => s.len() == 3 && s[1] == in_channels,
            LayerSpec::BatchNorm1d { channels, .. } => s.len() == 3 && s[1] == channels,
            LayerSpec::Relu => true,
            LayerSpec::Linear { in_features, .. } => s.len() == 2 && s[1] == in_features,
        };
        if ok {
            return Ok(());
        }
        let expected = match self.spec {
            LayerSpec::Conv1d {
                in_channels,
                kernel,
                ..
            } => format!("(batch, {in_channels}, >= {kernel})"),
            LayerSpec::Deconv1d { in_channels, .. } => format!("(batch, {in_channels}, length)"),
            LayerSpec::BatchNorm1d { channels, .. } => format!("(batch, {channels}, length)"),
            LayerSpec::Linear { in_features, .. } => format!("(batch, {in_features})"),
            LayerSpec::Relu => unreachable!(),
        };
        Err(Error::Dimension {
            context: self.spec.kind().to_string(),
            expected,
            actual: format!("{s:?}"),
        })
    }

    /// Forward pass. Training mode caches what `backward` needs and, for
    /// batchnorm, normalizes with batch statistics and updates running stats.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        if mode == Mode::Eval {
            self.cache = None;
            return self.infer(x);
        }
        match self.spec {
            LayerSpec::BatchNorm1d { eps, momentum, .. } => {
                let (y, xhat, inv_std, mean, var_unbiased) =
                    batchnorm_train(x, &self.params[0], &self.params[1], eps);
                let [rm, rv] = self.running.as_mut_slice() else {
                    unreachable!()
                };
                for (r, m) in rm.data_mut().iter_mut().zip(&mean) {
                    *r = (1.0 - momentum) * *r + momentum * m;
                }
                for (r, v) in rv.data_mut().iter_mut().zip(&var_unbiased) {
                    *r = (1.0 - momentum) * *r + momentum * v;
                }
                let s = x.shape();
                self.cache = Some(Cache::Norm {
                    xhat,
                    inv_std,
                    shape: [s[0], s[1], s[2]],
                });
                Ok(y)
            }
            _ => {
                let y = self.infer(x)?;
                self.cache = Some(Cache::Input(x.clone()));
                Ok(y)
            }
        }
    }

    /// Evaluation-mode forward pass; touches no state.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(match self.spec {
            LayerSpec::Conv1d { stride, .. } => {
                conv1d_forward(x, &self.params[0], self.params.get(1), stride)
            }
            LayerSpec::Deconv1d {
                stride,
                output_padding,
                ..
            } => deconv1d_forward(x, &self.params[0], self.params.get(1), stride, output_padding),
            LayerSpec::BatchNorm1d { eps, .. } => batchnorm_eval(
                x,
                &self.params[0],
                &self.params[1],
                &self.running[0],
                &self.running[1],
                eps,
            ),
            LayerSpec::Relu => {
                let mut y = x.clone();
                y.clear_grad();
                for v in y.data_mut() {
                    *v = v.max(0.0);
                }
                y
            }
            LayerSpec::Linear { .. } => linear_forward(x, &self.params[0], &self.params[1]),
        })
    }

    /// Backpropagates `dy`, accumulating parameter gradients into their
    /// tensors' gradient slots and returning the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::Usage(format!(
                "{} backward called without a cached training-mode forward",
                self.spec.kind()
            ))
        })?;
        match (&self.spec, &cache) {
            (LayerSpec::BatchNorm1d { .. }, Cache::Norm { xhat, inv_std, shape }) => {
                if dy.shape() != shape {
                    return Err(Error::dimension("batchnorm1d backward", shape, dy.shape()));
                }
                let (gamma, rest) = self.params.split_at_mut(1);
                Ok(batchnorm_backward(dy, xhat, inv_std, &mut gamma[0], &mut rest[0]))
            }
            (spec, Cache::Input(x)) => {
                let expected_len = match spec {
                    LayerSpec::Linear { out_features, .. } => Some(*out_features),
                    other => other.output_len(x.shape()[x.shape().len() - 1]),
                };
                let mut expected = x.shape().to_vec();
                let last = expected.len() - 1;
                expected[last] = expected_len.unwrap_or(0);
                match spec {
                    LayerSpec::Conv1d { out_channels, .. }
                    | LayerSpec::Deconv1d { out_channels, .. } => expected[1] = *out_channels,
                    _ => {}
                }
                if dy.shape() != expected.as_slice() {
                    return Err(Error::dimension(
                        format!("{} backward", spec.kind()),
                        &expected,
                        dy.shape(),
                    ));
                }
                let stride_of = |s: &LayerSpec| match *s {
                    LayerSpec::Conv1d { stride, .. } | LayerSpec::Deconv1d { stride, .. } => {
                        stride
                    }
                    _ => 1,
                };
                let stride = stride_of(spec);
                Ok(match spec {
                    LayerSpec::Conv1d { .. } => conv1d_backward(x, dy, &mut self.params, stride),
                    LayerSpec::Deconv1d { .. } => {
                        deconv1d_backward(x, dy, &mut self.params, stride)
                    }
                    LayerSpec::Relu => {
                        let mut dx = dy.clone();
                        dx.clear_grad();
                        for (g, v) in dx.data_mut().iter_mut().zip(x.data()) {
                            if *v <= 0.0 {
                                *g = 0.0;
                            }
                        }
                        dx
                    }
                    LayerSpec::Linear { .. } => linear_backward(x, dy, &mut self.params),
                    LayerSpec::BatchNorm1d { .. } => unreachable!(),
                })
            }
            _ => unreachable!("cache kind always matches layer kind"),
        }
    }
}

/// `C (m x n) = beta * C + A (m x k) * B (k x n)` on row-major buffers;
/// `at`/`bt` read the operand transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices hold at least m*k, k*n and m*n elements, which is
    // exactly the extent addressed by these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Patch matrix `(bsz * lout, ch * k)` of a `(bsz, ch, len)` buffer.
fn im2col(xd: &[f64], bsz: usize, ch: usize, len: usize, k: usize, stride: usize, lout: usize) -> Vec<f64> {
    let mut p = vec![0.0; bsz * lout * ch * k];
    for bi in 0..bsz {
        for t in 0..lout {
            let row = &mut p[(bi * lout + t) * ch * k..(bi * lout + t + 1) * ch * k];
            for ci in 0..ch {
                let src = (bi * ch + ci) * len + t * stride;
                row[ci * k..(ci + 1) * k].copy_from_slice(&xd[src..src + k]);
            }
        }
    }
    p
}

/// Scatter-adds a patch matrix back into a `(bsz, ch, len)` buffer.
#[allow(clippy::too_many_arguments)]
fn col2im(p: &[f64], out: &mut [f64], bsz: usize, ch: usize, len: usize, k: usize, stride: usize, lout: usize) {
    for bi in 0..bsz {
        for t in 0..lout {
            let row = &p[(bi * lout + t) * ch * k..(bi * lout + t + 1) * ch * k];
            for ci in 0..ch {
                let dst = (bi * ch + ci) * len + t * stride;
                for (o, v) in out[dst..dst + k].iter_mut().zip(&row[ci * k..(ci + 1) * k]) {
                    *o += v;
                }
            }
        }
    }
}

/// `(bsz, ch, len)` <-> `(bsz * len, ch)` layouts.
fn channels_last(xd: &[f64], bsz: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; xd.len()];
    for bi in 0..bsz {
        for c in 0..ch {
            for t in 0..len {
                out[(bi * len + t) * ch + c] = xd[(bi * ch + c) * len + t];
            }
        }
    }
    out
}

fn channels_first(xd: &[f64], bsz: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; xd.len()];
    for bi in 0..bsz {
        for t in 0..len {
            for c in 0..ch {
                out[(bi * ch + c) * len + t] = xd[(bi * len + t) * ch + c];
            }
        }
    }
    out
}

fn add_channel_bias(yd: &mut [f64], b: &Tensor, len: usize) {
    let c = b.len();
    for (i, row) in yd.chunks_mut(len).enumerate() {
        let v = b.data()[i % c];
        row.iter_mut().for_each(|y| *y += v);
    }
}

fn channel_bias_grad(dyd: &[f64], db: &mut [f64], len: usize) {
    let c = db.len();
    for (i, row) in dyd.chunks(len).enumerate() {
        db[i % c] += row.iter().sum::<f64>();
    }
}

fn conv1d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Tensor {
    let (bsz, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let lout = (len - k) / stride + 1;
    let p = im2col(x.data(), bsz, cin, len, k, stride, lout);
    let mut ym = vec![0.0; bsz * lout * cout];
    gemm(bsz * lout, cin * k, cout, &p, false, w.data(), true, 0.0, &mut ym);
    let mut yd = channels_first(&ym, bsz, cout, lout);
    if let Some(b) = b {
        add_channel_bias(&mut yd, b, lout);
    }
    Tensor::new(vec![bsz, cout, lout], yd).expect("conv output shape")
}

fn conv1d_backward(x: &Tensor, dy: &Tensor, params: &mut [Tensor], stride: usize) -> Tensor {
    let (bsz, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, lout) = (dy.shape()[1], dy.shape()[2]);
    let k = params[0].shape()[2];
    let p = im2col(x.data(), bsz, cin, len, k, stride, lout);
    let dym = channels_last(dy.data(), bsz, cout, lout);
    let m = bsz * lout;
    let mut dp = vec![0.0; m * cin * k];
    gemm(m, cout, cin * k, &dym, false, params[0].data(), false, 0.0, &mut dp);
    gemm(cout, m, cin * k, &dym, true, &p, false, 1.0, params[0].grad_mut());
    if params.len() > 1 {
        channel_bias_grad(dy.data(), params[1].grad_mut(), lout);
    }
    let mut dx = Tensor::zeros(x.shape());
    col2im(&dp, dx.data_mut(), bsz, cin, len, k, stride, lout);
    dx
}

fn deconv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    output_padding: usize,
) -> Tensor {
    let (bsz, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[1], w.shape()[2]);
    let lout = (len - 1) * stride + k + output_padding;
    let xm = channels_last(x.data(), bsz, cin, len);
    let mut q = vec![0.0; bsz * len * cout * k];
    gemm(bsz * len, cin, cout * k, &xm, false, w.data(), false, 0.0, &mut q);
    let mut y = Tensor::zeros(&[bsz, cout, lout]);
    col2im(&q, y.data_mut(), bsz, cout, lout, k, stride, len);
    if let Some(b) = b {
        add_channel_bias(y.data_mut(), b, lout);
    }
    y
}

fn deconv1d_backward(x: &Tensor, dy: &Tensor, params: &mut [Tensor], stride: usize) -> Tensor {
    let (bsz, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, lout) = (dy.shape()[1], dy.shape()[2]);
    let k = params[0].shape()[2];
    let dq = im2col(dy.data(), bsz, cout, lout, k, stride, len);
    let xm = channels_last(x.data(), bsz, cin, len);
    let m = bsz * len;
    let mut dxm = vec![0.0; m * cin];
    gemm(m, cout * k, cin, &dq, false, params[0].data(), true, 0.0, &mut dxm);
    gemm(cin, m, cout * k, &xm, true, &dq, false, 1.0, params[0].grad_mut());
    if params.len() > 1 {
        channel_bias_grad(dy.data(), params[1].grad_mut(), lout);
    }
    Tensor::new(x.shape().to_vec(), channels_first(&dxm, bsz, cin, len)).expect("input shape")
}

type BnOut = (Tensor, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn batchnorm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> BnOut {
    let (bsz, c, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = (bsz * len) as f64;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for bi in 0..bsz {
        for ch in 0..c {
            let row = &xd[(bi * c + ch) * len..(bi * c + ch + 1) * len];
            mean[ch] += row.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for bi in 0..bsz {
        for ch in 0..c {
            let row = &xd[(bi * c + ch) * len..(bi * c + ch + 1) * len];
            var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    let var_unbiased: Vec<f64> = var
        .iter()
        .map(|v| if n > 1.0 { v / (n - 1.0) } else { *v })
        .collect();
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for bi in 0..bsz {
        for ch in 0..c {
            let off = (bi * c + ch) * len;
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for t in off..off + len {
                let h = (xd[t] - mean[ch]) * inv_std[ch];
                xhat[t] = h;
                yd[t] = g * h + b;
            }
        }
    }
    (y, xhat, inv_std, mean, var_unbiased)
}

fn batchnorm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
) -> Tensor {
    let (bsz, c, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = Tensor::zeros(x.shape());
    let (xd, yd) = (x.data(), y.data_mut());
    for ch in 0..c {
        let scale = gamma.data()[ch] / (var.data()[ch] + eps).sqrt();
        let shift = beta.data()[ch] - mean.data()[ch] * scale;
        for bi in 0..bsz {
            let off = (bi * c + ch) * len;
            for t in off..off + len {
                yd[t] = xd[t] * scale + shift;
            }
        }
    }
    y
}

fn batchnorm_backward(
    dy: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &mut Tensor,
    beta: &mut Tensor,
) -> Tensor {
    let (bsz, c, len) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
    let n = (bsz * len) as f64;
    let dyd = dy.data();
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for bi in 0..bsz {
        for ch in 0..c {
            let off = (bi * c + ch) * len;
            for t in off..off + len {
                sum_dy[ch] += dyd[t];
                sum_dy_xhat[ch] += dyd[t] * xhat[t];
            }
        }
    }
    {
        let dg = gamma.grad_mut();
        for ch in 0..c {
            dg[ch] += sum_dy_xhat[ch];
        }
    }
    {
        let db = beta.grad_mut();
        for ch in 0..c {
            db[ch] += sum_dy[ch];
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    let dxd = dx.data_mut();
    for bi in 0..bsz {
        for ch in 0..c {
            let off = (bi * c + ch) * len;
            let k = gamma.data()[ch] * inv_std[ch] / n;
            for t in off..off + len {
                dxd[t] = k * (n * dyd[t] - sum_dy[ch] - xhat[t] * sum_dy_xhat[ch]);
            }
        }
    }
    dx
}

fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (bsz, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    let mut yd: Vec<f64> = (0..bsz).flat_map(|_| b.data().iter().copied()).collect();
    gemm(bsz, fin, fout, x.data(), false, w.data(), true, 1.0, &mut yd);
    Tensor::new(vec![bsz, fout], yd).expect("linear output shape")
}

fn linear_backward(x: &Tensor, dy: &Tensor, params: &mut [Tensor]) -> Tensor {
    let (bsz, fin) = (x.shape()[0], x.shape()[1]);
    let fout = dy.shape()[1];
    let mut dx = Tensor::zeros(x.shape());
    gemm(bsz, fout, fin, dy.data(), false, params[0].data(), false, 0.0, dx.data_mut());
    gemm(fout, bsz, fin, dy.data(), true, x.data(), false, 1.0, params[0].grad_mut());
    let db = params[1].grad_mut();
    for row in dy.data().chunks(fout) {
        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
    }
    dx
}
