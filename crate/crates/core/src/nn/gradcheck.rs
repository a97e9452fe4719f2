//! Central finite-difference gradient verification.

use rand::seq::index::sample;

use super::layers::Mode;
use super::tensor::Tensor;
use super::Module;
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    /// max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    pub checked: usize,
    /// (flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some((index, analytic, numeric));
        }
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("non-finite {what} during gradient check")))
    }
}

fn pick(n: usize, limit: Option<(usize, u64)>) -> Vec<usize> {
    match limit {
        Some((k, seed)) if k < n => {
            let mut idx = sample(&mut rng_from(seed), n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn finite_difference_check(
    x: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradCheck> {
    if x.len() != analytic.len() {
        return Err(Error::dimension("finite_difference_check", x.len(), analytic.len()));
    }
    let mut report = GradCheck::default();
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = finite(f(&probe)?, "loss")?;
        probe[i] = x[i] - FD_STEP;
        let down = finite(f(&probe)?, "loss")?;
        probe[i] = x[i];
        report.record(i, analytic[i], (up - down) / (2.0 * FD_STEP));
    }
    Ok(report)
}

fn loss_at<M: Module>(
    module: &mut M,
    input: &Tensor,
    loss: &impl Fn(&Tensor) -> Result<(f64, Tensor)>,
) -> Result<f64> {
    let out = module.forward(input, Mode::Train)?;
    finite(loss(&out)?.0, "loss")
}

/// Checks the parameter gradients of `module` under `loss`, evaluated in
/// training mode. `limit = Some((k, seed))` checks a seeded random subset of
/// `k` coordinates. A module without parameters reports zero error.
pub fn gradient_check<M: Module + Clone>(
    module: &M,
    input: &Tensor,
    loss: impl Fn(&Tensor) -> Result<(f64, Tensor)>,
    limit: Option<(usize, u64)>,
) -> Result<GradCheck> {
    let mut work = module.clone();
    work.zero_grad();
    let out = work.forward(input, Mode::Train)?;
    let (value, dy) = loss(&out)?;
    finite(value, "loss")?;
    work.backward(&dy)?;
    let analytic: Vec<f64> = work
        .params()
        .iter()
        .flat_map(|p| match p.grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; p.len()],
        })
        .collect();
    let offsets: Vec<(usize, usize)> = {
        let mut acc = 0;
        work.params()
            .iter()
            .map(|p| {
                let o = (acc, p.len());
                acc += p.len();
                o
            })
            .collect()
    };

    let mut report = GradCheck::default();
    for flat in pick(analytic.len(), limit) {
        let (pi, (start, _)) = offsets
            .iter()
            .enumerate()
            .rfind(|(_, (s, _))| *s <= flat)
            .map(|(i, o)| (i, *o))
            .expect("offset table covers every index");
        let j = flat - start;
        let orig = work.params()[pi].data()[j];
        work.params_mut()[pi].data_mut()[j] = orig + FD_STEP;
        let up = loss_at(&mut work, input, &loss)?;
        work.params_mut()[pi].data_mut()[j] = orig - FD_STEP;
        let down = loss_at(&mut work, input, &loss)?;
        work.params_mut()[pi].data_mut()[j] = orig;
        report.record(flat, analytic[flat], (up - down) / (2.0 * FD_STEP));
    }
    Ok(report)
}

/// Same as [`gradient_check`] but for the gradient with respect to `input`.
pub fn input_gradient_check<M: Module + Clone>(
    module: &M,
    input: &Tensor,
    loss: impl Fn(&Tensor) -> Result<(f64, Tensor)>,
    limit: Option<(usize, u64)>,
) -> Result<GradCheck> {
    let mut work = module.clone();
    let out = work.forward(input, Mode::Train)?;
    let (_, dy) = loss(&out)?;
    let dx = work.backward(&dy)?;
    let mut report = GradCheck::default();
    let mut probe = input.clone();
    for i in pick(input.len(), limit) {
        let orig = input.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = loss_at(&mut work, &probe, &loss)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = loss_at(&mut work, &probe, &loss)?;
        probe.data_mut()[i] = orig;
        report.record(i, dx.data()[i], (up - down) / (2.0 * FD_STEP));
    }
    Ok(report)
}
