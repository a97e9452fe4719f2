//! Checks shared by the integration tests and the acceptance target.
//! Every oracle here is written independently of the library code it
//! checks: plain loops, no shared helpers.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use shmssl::datagen::{case_counts, gen_dataset, Case};
use shmssl::nn::{
    finite_difference_check, gradient_check, input_gradient_check, mse_loss, softmax_cross_entropy, Layer,
    LayerSpec, Tensor,
};
use shmssl::reduction::{ierfh, TimeSeriesSegment, IERFH_BINS};
use shmssl::rng::{derive_indexed, rng_from, SeededRng};
use shmssl::ssl::{discriminator_loss, generator_loss, mixup_loss, simclr_loss};
use shmssl::Result;

pub fn normal_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = StandardNormal.sample(rng);
    }
    t
}

/// `sum(w * y)` with fixed random weights: a smooth scalar loss.
pub fn weighted_sum(w: Tensor) -> impl Fn(&Tensor) -> Result<(f64, Tensor)> {
    move |y: &Tensor| {
        let v = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        Ok((v, w.clone()))
    }
}

/// Worst relative error per layer kind over `instances` random small
/// layers, parameters and inputs both checked.
pub fn layer_gradient_errors(instances: u64) -> Vec<(&'static str, f64)> {
    let mut worst = vec![("conv1d", 0.0), ("deconv1d", 0.0), ("batchnorm1d", 0.0), ("linear", 0.0), ("relu", 0.0)];
    for s in 0..instances {
        let mut rng = rng_from(derive_indexed(17, "layer-gradcheck", s));
        let b = rng.random_range(2..=3);
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let len = rng.random_range(k..k + 8);
        let pad = rng.random_range(0..stride);
        let specs = [
            (LayerSpec::conv1d(cin, cout, k, stride), vec![b, cin, len]),
            (LayerSpec::deconv1d(cin, cout, k, stride, pad), vec![b, cin, len]),
            (LayerSpec::batchnorm1d(cin), vec![b, cin, len]),
            (LayerSpec::linear(cin * 2, cout + 1), vec![b, cin * 2]),
            (LayerSpec::Relu, vec![b, cin, len]),
        ];
        for (slot, (spec, shape)) in specs.into_iter().enumerate() {
            let layer = Layer::new(spec, &mut rng);
            let mut x = normal_tensor(&shape, &mut rng);
            if slot == 4 {
                // keep clear of the kink at 0
                for v in x.data_mut() {
                    *v += 0.2 * v.signum();
                }
            }
            let out_shape = layer.infer(&x).unwrap().shape().to_vec();
            let w = normal_tensor(&out_shape, &mut rng);
            let p = gradient_check(&layer, &x, weighted_sum(w.clone()), None).unwrap();
            let i = input_gradient_check(&layer, &x, weighted_sum(w), None).unwrap();
            let e = p.max_rel_error.max(i.max_rel_error);
            worst[slot].1 = f64::max(worst[slot].1, e);
        }
    }
    worst
}

fn flat(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().to_vec()).collect()
}

fn split(x: &[f64], shapes: &[Vec<usize>]) -> Vec<Tensor> {
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s.clone(), x[off..off + n].to_vec()).unwrap();
            off += n;
            t
        })
        .collect()
}

/// Worst relative error per loss over `instances` random small batches.
pub fn loss_gradient_errors(instances: u64) -> Vec<(&'static str, f64)> {
    let mut worst = vec![
        ("reconstruction", 0.0),
        ("simclr", 0.0),
        ("mixup", 0.0),
        ("discriminator", 0.0),
        ("generator", 0.0),
        ("cross_entropy", 0.0),
    ];
    for s in 0..instances {
        let mut rng = rng_from(derive_indexed(23, "loss-gradcheck", s));
        let b = rng.random_range(1..=4);
        let d = rng.random_range(2..=5);
        let sh = vec![b, d];
        let tau = rng.random_range(0.1..1.0);

        let target = normal_tensor(&sh, &mut rng);
        let x = normal_tensor(&sh, &mut rng);
        let (_, g) = mse_loss(&x, &target).unwrap();
        let r = finite_difference_check(x.data(), g.data(), |p| {
            Ok(mse_loss(&Tensor::new(sh.clone(), p.to_vec())?, &target)?.0)
        })
        .unwrap();
        worst[0].1 = f64::max(worst[0].1, r.max_rel_error);

        let z1 = normal_tensor(&sh, &mut rng);
        let z2 = normal_tensor(&sh, &mut rng);
        let l = simclr_loss(&z1, &z2, tau).unwrap();
        let shapes = vec![sh.clone(), sh.clone()];
        let r = finite_difference_check(&flat(&[&z1, &z2]), &flat(&[&l.grad_z1, &l.grad_z2]), |p| {
            let t = split(p, &shapes);
            Ok(simclr_loss(&t[0], &t[1], tau)?.loss)
        })
        .unwrap();
        worst[1].1 = f64::max(worst[1].1, r.max_rel_error);

        let zm = normal_tensor(&sh, &mut rng);
        let lambda: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
        let l = mixup_loss(&z1, &zm, &z2, &lambda, tau).unwrap();
        let shapes = vec![sh.clone(), sh.clone(), sh.clone()];
        let r = finite_difference_check(
            &flat(&[&z1, &zm, &z2]),
            &flat(&[&l.grad_z1, &l.grad_mixed, &l.grad_z2]),
            |p| {
                let t = split(p, &shapes);
                Ok(mixup_loss(&t[0], &t[1], &t[2], &lambda, tau)?.loss)
            },
        )
        .unwrap();
        worst[2].1 = f64::max(worst[2].1, r.max_rel_error);

        let lsh = vec![b, 1];
        let real = normal_tensor(&lsh, &mut rng);
        let fake = normal_tensor(&lsh, &mut rng);
        let (_, gr, gf) = discriminator_loss(&real, &fake).unwrap();
        let shapes = vec![lsh.clone(), lsh.clone()];
        let r = finite_difference_check(&flat(&[&real, &fake]), &flat(&[&gr, &gf]), |p| {
            let t = split(p, &shapes);
            Ok(discriminator_loss(&t[0], &t[1])?.0)
        })
        .unwrap();
        worst[3].1 = f64::max(worst[3].1, r.max_rel_error);

        let (_, g) = generator_loss(&fake).unwrap();
        let r = finite_difference_check(fake.data(), g.data(), |p| {
            Ok(generator_loss(&Tensor::new(lsh.clone(), p.to_vec())?)?.0)
        })
        .unwrap();
        worst[4].1 = f64::max(worst[4].1, r.max_rel_error);

        let k = d.max(2);
        let logits = normal_tensor(&[b, k], &mut rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let r = finite_difference_check(logits.data(), g.data(), |p| {
            Ok(softmax_cross_entropy(&Tensor::new(vec![b, k], p.to_vec())?, &labels)?.0.loss)
        })
        .unwrap();
        worst[5].1 = f64::max(worst[5].1, r.max_rel_error);
    }
    worst
}

fn naive_cos(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    uv / (uu.sqrt() * vv.sqrt())
}

/// NT-Xent written out term by term: views interleaved as (1, 2), (3, 4), ...
pub fn naive_simclr(z1: &[Vec<f64>], z2: &[Vec<f64>], tau: f64) -> f64 {
    let b = z1.len();
    let mut views = Vec::new();
    for i in 0..b {
        views.push(z1[i].clone());
        views.push(z2[i].clone());
    }
    let n = 2 * b;
    let l = |i: usize, j: usize| {
        let num = (naive_cos(&views[i], &views[j]) / tau).exp();
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (naive_cos(&views[i], &views[k]) / tau).exp();
            }
        }
        -(num / den).ln()
    };
    let mut total = 0.0;
    for k in 0..b {
        total += l(2 * k, 2 * k + 1) + l(2 * k + 1, 2 * k);
    }
    total / n as f64
}

pub fn naive_mixup(z1: &[Vec<f64>], mixed: &[Vec<f64>], z2: &[Vec<f64>], lambda: &[f64], tau: f64) -> f64 {
    let b = mixed.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut den = 0.0;
        for j in 0..b {
            den += (naive_cos(&mixed[i], &z1[j]) / tau).exp();
            den += (naive_cos(&mixed[i], &z2[j]) / tau).exp();
        }
        let p1 = (naive_cos(&mixed[i], &z1[i]) / tau).exp() / den;
        let p2 = (naive_cos(&mixed[i], &z2[i]) / tau).exp() / den;
        total += -lambda[i] * p1.ln() - (1.0 - lambda[i]) * p2.ln();
    }
    total / b as f64
}

pub fn naive_gan(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let mut ld = 0.0;
    let mut lg = 0.0;
    for i in 0..d_real.len() {
        ld += -d_real[i].ln() - (1.0 - d_fake[i]).ln();
        lg += -d_fake[i].ln();
    }
    (ld / d_real.len() as f64, lg / d_real.len() as f64)
}

fn rows(rng: &mut SeededRng, b: usize, d: usize) -> Vec<Vec<f64>> {
    (0..b).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

fn tensor(r: &[Vec<f64>]) -> Tensor {
    Tensor::new(vec![r.len(), r[0].len()], r.concat()).unwrap()
}

/// Max |library - naive| for (simclr, mixup, gan) over `cases` random
/// batches per loss with batch sizes cycling through 1..=8.
pub fn oracle_deviations(cases: u64) -> [f64; 3] {
    let mut dev = [0.0f64; 3];
    for c in 0..cases {
        let mut rng = rng_from(derive_indexed(31, "oracle", c));
        let b = (c % 8) as usize + 1;
        let d = rng.random_range(2..=16);
        let tau = [0.5, 0.1, 1.0][(c % 3) as usize];
        let z1 = rows(&mut rng, b, d);
        let z2 = rows(&mut rng, b, d);
        let zm = rows(&mut rng, b, d);
        let lambda: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..=1.0)).collect();
        let got = simclr_loss(&tensor(&z1), &tensor(&z2), tau).unwrap().loss;
        dev[0] = dev[0].max((got - naive_simclr(&z1, &z2, tau)).abs());
        let got = mixup_loss(&tensor(&z1), &tensor(&zm), &tensor(&z2), &lambda, tau).unwrap().loss;
        dev[1] = dev[1].max((got - naive_mixup(&z1, &zm, &z2, &lambda, tau)).abs());
        let pr: Vec<f64> = (0..b).map(|_| rng.random_range(0.001..0.999)).collect();
        let pf: Vec<f64> = (0..b).map(|_| rng.random_range(0.001..0.999)).collect();
        let (ld, lg) = shmssl::ssl::gan_loss(&pr, &pf).unwrap();
        let (nd, ng) = naive_gan(&pr, &pf);
        dev[2] = dev[2].max((ld - nd).abs()).max((lg - ng).abs());
    }
    dev
}

/// Minimizes `-lam*u1 - (1-lam)*u2 + ln(e^u1 + e^u2 + neg)` over (u1, u2)
/// by gradient descent with backtracking and step growth. Returns the
/// final `e^(u1-u2)` and `neg / Z`.
pub fn minimize_mixing_objective(lam: f64, neg: f64) -> (f64, f64) {
    let f = |u: [f64; 2]| {
        let m = u[0].max(u[1]).max(neg.ln());
        -lam * u[0] - (1.0 - lam) * u[1] + m + ((u[0] - m).exp() + (u[1] - m).exp() + (neg.ln() - m).exp()).ln()
    };
    let grad = |u: [f64; 2]| {
        let m = u[0].max(u[1]).max(neg.ln());
        let e1 = (u[0] - m).exp();
        let e2 = (u[1] - m).exp();
        let z = e1 + e2 + (neg.ln() - m).exp();
        [e1 / z - lam, e2 / z - (1.0 - lam)]
    };
    let tail = |u: [f64; 2]| {
        let m = u[0].max(u[1]).max(neg.ln());
        let en = (neg.ln() - m).exp();
        en / ((u[0] - m).exp() + (u[1] - m).exp() + en)
    };
    let mut u = [0.0, 0.0];
    let mut step = 1.0;
    for _ in 0..200_000 {
        let g = grad(u);
        let gg = g[0] * g[0] + g[1] * g[1];
        if tail(u) < 1e-7 && gg < 1e-14 {
            break;
        }
        let f0 = f(u);
        step *= 2.0;
        loop {
            let cand = [u[0] - step * g[0], u[1] - step * g[1]];
            if f(cand) <= f0 - 0.5 * step * gg || step < 1e-12 {
                u = cand;
                break;
            }
            step *= 0.5;
        }
    }
    ((u[0] - u[1]).exp(), tail(u))
}

pub struct IerfhReport {
    pub segments: usize,
    pub all_len_512: bool,
    pub all_in_unit: bool,
    pub max_sum_error: f64,
    pub permutation_invariant: bool,
    pub duplication_invariant: bool,
    pub point_mass_ok: bool,
}

pub fn ierfh_invariants(segments: usize) -> IerfhReport {
    let mut rep = IerfhReport {
        segments,
        all_len_512: true,
        all_in_unit: true,
        max_sum_error: 0.0,
        permutation_invariant: true,
        duplication_invariant: true,
        point_mass_ok: true,
    };
    for s in 0..segments {
        let mut rng = rng_from(derive_indexed(41, "ierfh", s as u64));
        let n = rng.random_range(1..3000);
        let lo: f64 = rng.random_range(-100.0..0.0);
        let hi = lo + rng.random_range(0.1..200.0);
        let scale = (hi - lo) * rng.random_range(0.01..0.8);
        let mid = 0.5 * (lo + hi);
        let mut x: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mid + scale * z
            })
            .collect();
        let seg = |v: Vec<f64>| TimeSeriesSegment::new(v, 1.0, lo, hi).unwrap();
        let g = ierfh(&seg(x.clone())).unwrap().values;
        rep.all_len_512 &= g.len() == IERFH_BINS;
        rep.all_in_unit &= g.iter().all(|v| (0.0..=1.0).contains(v));
        let total: f64 = g.iter().map(|v| 1.0 - v).sum();
        rep.max_sum_error = rep.max_sum_error.max((total - 1.0).abs());
        let doubled = [x.clone(), x.clone()].concat();
        rep.duplication_invariant &= ierfh(&seg(doubled)).unwrap().values == g;
        x.shuffle(&mut rng);
        rep.permutation_invariant &= ierfh(&seg(x)).unwrap().values == g;
    }
    let g = ierfh(&TimeSeriesSegment::new(vec![0.0; 3600], 1.0, -1.0, 1.0).unwrap())
        .unwrap()
        .values;
    rep.point_mass_ok = g[256] == 0.0 && g.iter().enumerate().all(|(i, v)| i == 256 || *v == 1.0);
    rep
}

/// Nearest-centroid test accuracy: centroids from `per_class` samples of
/// each class, scored on a second, independently seeded draw.
pub fn nearest_centroid_accuracy(case: Case, per_class: usize) -> f64 {
    let k = case.num_classes();
    let counts = case_counts(case, &vec![per_class; k]).unwrap();
    let train = gen_dataset(case, &counts, 101).unwrap();
    let test = gen_dataset(case, &counts, 202).unwrap();
    let mut centroids = vec![vec![0.0; IERFH_BINS]; k];
    for s in &train {
        for (c, v) in centroids[s.label].iter_mut().zip(&s.feature.values) {
            *c += v / per_class as f64;
        }
    }
    let correct = test
        .iter()
        .filter(|s| {
            let dist = |c: &Vec<f64>| c.iter().zip(&s.feature.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == s.label
        })
        .count();
    correct as f64 / test.len() as f64
}
