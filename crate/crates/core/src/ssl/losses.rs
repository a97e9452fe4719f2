//! Pretext-task losses with their gradients.

use crate::error::{Error, Result};
use crate::nn::{mse_loss, sigmoid, Tensor};

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dimension("cosine_sim", u.len(), v.len()));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot(u, v) / (nu * nv))
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Reconstruction loss (1/B) * sum ||x_hat - x||^2 and its gradient w.r.t. `x_hat`.
pub fn ae_loss(x_hat: &Tensor, x: &Tensor) -> Result<(f64, Tensor)> {
    mse_loss(x_hat, x)
}

/// Unit rows of a (n x d) matrix plus the original norms.
struct Normalized {
    u: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn normalize_rows(z: &Tensor, what: &str) -> Result<Normalized> {
    if z.shape().len() != 2 {
        return Err(Error::dimension(what, "(B, d)", z.shape()));
    }
    let mut u = Vec::new();
    let mut norms = Vec::new();
    for row in z.rows() {
        let n = norm(row);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numeric(format!("{what}: zero-norm or non-finite embedding")));
        }
        u.push(row.iter().map(|v| v / n).collect());
        norms.push(n);
    }
    Ok(Normalized { u, norms })
}

/// Pulls a gradient w.r.t. unit vectors back to the raw embeddings.
fn unnormalize_grad(n: &Normalized, du: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(du.len() * du.first().map_or(0, Vec::len));
    for ((u, g), &len) in n.u.iter().zip(du).zip(&n.norms) {
        let proj = dot(u, g);
        out.extend(u.iter().zip(g).map(|(ui, gi)| (gi - ui * proj) / len));
    }
    out
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub struct SimclrLoss {
    pub loss: f64,
    pub grad_z1: Tensor,
    pub grad_z2: Tensor,
}

/// NT-Xent over the 2B views. Row `i` of `z1` and of `z2` are the positive
/// pair; every other view in the batch is a negative.
pub fn simclr_loss(z1: &Tensor, z2: &Tensor, tau: f64) -> Result<SimclrLoss> {
    if z1.shape() != z2.shape() {
        return Err(Error::dimension("simclr_loss", z1.shape(), z2.shape()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let b = z1.shape()[0];
    let d = z1.shape()[1];
    let mut all = z1.data().to_vec();
    all.extend_from_slice(z2.data());
    let n = normalize_rows(&Tensor::new(vec![2 * b, d], all)?, "simclr_loss")?;
    let m = 2 * b;
    let s: Vec<Vec<f64>> = (0..m)
        .map(|a| (0..m).map(|k| dot(&n.u[a], &n.u[k]) / tau).collect())
        .collect();

    let mut loss = 0.0;
    let mut du = vec![vec![0.0; d]; m];
    for a in 0..m {
        let pos = (a + b) % m;
        let lse = log_sum_exp((0..m).filter(|&k| k != a).map(|k| s[a][k]));
        loss += lse - s[a][pos];
        for k in (0..m).filter(|&k| k != a) {
            let p = (s[a][k] - lse).exp();
            let ds = (p - if k == pos { 1.0 } else { 0.0 }) / (m as f64 * tau);
            for j in 0..d {
                du[a][j] += ds * n.u[k][j];
                du[k][j] += ds * n.u[a][j];
            }
        }
    }
    let grad = unnormalize_grad(&n, &du);
    let (g1, g2) = grad.split_at(b * d);
    Ok(SimclrLoss {
        loss: loss / m as f64,
        grad_z1: Tensor::new(vec![b, d], g1.to_vec())?,
        grad_z2: Tensor::new(vec![b, d], g2.to_vec())?,
    })
}

pub struct MixupLoss {
    pub loss: f64,
    pub grad_z1: Tensor,
    pub grad_mixed: Tensor,
    pub grad_z2: Tensor,
}

/// Mixed-sample InfoNCE: the mixed embedding `i` should match `z1[i]` with
/// weight `lambda[i]` and `z2[i]` with weight `1 - lambda[i]`; the
/// denominator runs over all 2B candidates of both sets.
pub fn mixup_loss(z1: &Tensor, mixed: &Tensor, z2: &Tensor, lambda: &[f64], tau: f64) -> Result<MixupLoss> {
    if z1.shape() != mixed.shape() || z2.shape() != mixed.shape() {
        return Err(Error::dimension(
            "mixup_loss",
            mixed.shape(),
            format!("{:?} / {:?}", z1.shape(), z2.shape()),
        ));
    }
    let b = mixed.shape()[0];
    let d = mixed.shape()[1];
    if lambda.len() != b {
        return Err(Error::dimension("mixup_loss lambda", b, lambda.len()));
    }
    if lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Numeric("mixing weight outside [0, 1]".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n1 = normalize_rows(z1, "mixup_loss")?;
    let nm = normalize_rows(mixed, "mixup_loss")?;
    let n2 = normalize_rows(z2, "mixup_loss")?;

    let mut loss = 0.0;
    let mut du1 = vec![vec![0.0; d]; b];
    let mut dum = vec![vec![0.0; d]; b];
    let mut du2 = vec![vec![0.0; d]; b];
    for i in 0..b {
        let s1: Vec<f64> = (0..b).map(|j| dot(&nm.u[i], &n1.u[j]) / tau).collect();
        let s2: Vec<f64> = (0..b).map(|j| dot(&nm.u[i], &n2.u[j]) / tau).collect();
        let lse = log_sum_exp(s1.iter().chain(&s2).copied());
        let lam = lambda[i];
        loss += lse - lam * s1[i] - (1.0 - lam) * s2[i];
        for j in 0..b {
            let t1 = if j == i { lam } else { 0.0 };
            let t2 = if j == i { 1.0 - lam } else { 0.0 };
            let ds1 = ((s1[j] - lse).exp() - t1) / (b as f64 * tau);
            let ds2 = ((s2[j] - lse).exp() - t2) / (b as f64 * tau);
            for k in 0..d {
                dum[i][k] += ds1 * n1.u[j][k] + ds2 * n2.u[j][k];
                du1[j][k] += ds1 * nm.u[i][k];
                du2[j][k] += ds2 * nm.u[i][k];
            }
        }
    }
    Ok(MixupLoss {
        loss: loss / b as f64,
        grad_z1: Tensor::new(vec![b, d], unnormalize_grad(&n1, &du1))?,
        grad_mixed: Tensor::new(vec![b, d], unnormalize_grad(&nm, &dum))?,
        grad_z2: Tensor::new(vec![b, d], unnormalize_grad(&n2, &du2))?,
    })
}

/// Adversarial losses from discriminator probabilities on a real and a fake
/// batch: `loss_d = mean(-ln D(x) - ln(1 - D(x_hat)))` and the
/// non-saturating generator loss `loss_g = mean(-ln D(x_hat))`.
pub fn gan_loss(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_real.len() != d_fake.len() {
        return Err(Error::dimension("gan_loss", d_real.len(), d_fake.len()));
    }
    if d_real.iter().chain(d_fake).any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::Numeric("discriminator output outside (0, 1)".into()));
    }
    let b = d_real.len() as f64;
    let loss_d = d_real
        .iter()
        .zip(d_fake)
        .map(|(r, f)| -r.ln() - (1.0 - f).ln())
        .sum::<f64>()
        / b;
    let loss_g = d_fake.iter().map(|f| -f.ln()).sum::<f64>() / b;
    Ok((loss_d, loss_g))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logits_of(t: &Tensor) -> Result<Vec<f64>> {
    if t.shape().len() != 2 || t.shape()[1] != 1 {
        return Err(Error::dimension("discriminator logits", "(B, 1)", t.shape()));
    }
    if !t.all_finite() {
        return Err(Error::Numeric("non-finite discriminator logit".into()));
    }
    Ok(t.data().to_vec())
}

/// Discriminator half of [`gan_loss`] from logits: the loss and gradients
/// w.r.t. the real and fake logits.
pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let r = logits_of(real_logits)?;
    let f = logits_of(fake_logits)?;
    if r.len() != f.len() {
        return Err(Error::dimension("discriminator_loss", r.len(), f.len()));
    }
    let b = r.len() as f64;
    let loss = r.iter().zip(&f).map(|(lr, lf)| softplus(-lr) + softplus(*lf)).sum::<f64>() / b;
    let gr = r.iter().map(|l| (sigmoid(*l) - 1.0) / b).collect();
    let gf = f.iter().map(|l| sigmoid(*l) / b).collect();
    Ok((
        loss,
        Tensor::new(real_logits.shape().to_vec(), gr)?,
        Tensor::new(fake_logits.shape().to_vec(), gf)?,
    ))
}

/// Non-saturating generator loss `mean(-ln D(x_hat))` from fake logits.
pub fn generator_loss(fake_logits: &Tensor) -> Result<(f64, Tensor)> {
    let f = logits_of(fake_logits)?;
    let b = f.len() as f64;
    let loss = f.iter().map(|l| softplus(-l)).sum::<f64>() / b;
    let g = f.iter().map(|l| (sigmoid(*l) - 1.0) / b).collect();
    Ok((loss, Tensor::new(fake_logits.shape().to_vec(), g)?))
}
