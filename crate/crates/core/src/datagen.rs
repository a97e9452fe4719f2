//! Seeded synthetic SHM segments for the nine data patterns.
//!
//! The healthy response is a sum of three lightly damped resonators driven by
//! white noise, plus a white measurement-noise floor. Each anomaly is added
//! as a separate component so its defining property can be checked directly
//! (see [`check_parts`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::reduction::{ierfh, FeatureVector, TimeSeriesSegment};
use crate::rng::{derive_indexed, rng_from, SeededRng};

/// Desk-scale segment length (one hour at 1 Hz).
pub const DESK_SEGMENT_LEN: usize = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pattern {
    Normal,
    Missing,
    Minor,
    Outlier,
    Square,
    Trend,
    Drift,
    Biased,
    Noise,
}

impl Pattern {
    pub const ALL: [Pattern; 9] = [
        Pattern::Normal,
        Pattern::Missing,
        Pattern::Minor,
        Pattern::Outlier,
        Pattern::Square,
        Pattern::Trend,
        Pattern::Drift,
        Pattern::Biased,
        Pattern::Noise,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Pattern::Normal => "normal",
            Pattern::Missing => "missing",
            Pattern::Minor => "minor",
            Pattern::Outlier => "outlier",
            Pattern::Square => "square",
            Pattern::Trend => "trend",
            Pattern::Drift => "drift",
            Pattern::Biased => "biased",
            Pattern::Noise => "noise",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown data pattern '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub pattern: Pattern,
    pub base_amplitude: f64,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub seed: u64,
}

impl PatternSpec {
    pub fn len(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Healthy response, additive anomaly component and the final segment.
#[derive(Debug, Clone)]
pub struct SegmentParts {
    pub response: Vec<f64>,
    pub anomaly: Vec<f64>,
    pub segment: TimeSeriesSegment,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn rescale_to_std(x: &mut [f64], target: f64) {
    let m = mean(x);
    let s = std(x);
    let k = if s > 0.0 { target / s } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v - m) * k);
}

fn center(x: &mut [f64]) {
    let m = mean(x);
    x.iter_mut().for_each(|v| *v -= m);
}

fn gauss(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Zero-mean ambient response with sample std exactly `amplitude`.
fn ambient_response(n: usize, amplitude: f64, rng: &mut SeededRng) -> Vec<f64> {
    const BURN_IN: usize = 500;
    let mut total = vec![0.0; n];
    for _ in 0..3 {
        // normalized frequency well below Nyquist (0.5)
        let freq: f64 = rng.random_range(0.01..0.3);
        let damping: f64 = rng.random_range(0.005..0.03);
        let omega = 2.0 * std::f64::consts::PI * freq;
        let r = (-damping * omega).exp();
        let (a1, a2) = (2.0 * r * omega.cos(), -r * r);
        let weight: f64 = rng.random_range(0.5..1.5);
        let mut mode = Vec::with_capacity(n);
        let (mut y1, mut y2) = (0.0, 0.0);
        for t in 0..n + BURN_IN {
            let y = a1 * y1 + a2 * y2 + gauss(rng);
            y2 = y1;
            y1 = y;
            if t >= BURN_IN {
                mode.push(y);
            }
        }
        rescale_to_std(&mut mode, weight);
        total.iter_mut().zip(&mode).for_each(|(t, m)| *t += m);
    }
    let floor: f64 = rng.random_range(0.1..0.3);
    for t in total.iter_mut() {
        *t += floor * gauss(rng);
    }
    rescale_to_std(&mut total, amplitude);
    total
}

/// Generates a segment with all its components.
pub fn gen_parts(spec: &PatternSpec) -> Result<SegmentParts> {
    let n = spec.len();
    if n == 0 {
        return Err(Error::Config("duration * rate must be at least one sample".into()));
    }
    if !(spec.base_amplitude > 0.0) {
        return Err(Error::Config("base amplitude must be positive".into()));
    }
    let a = spec.base_amplitude;
    let mut rng = rng_from(spec.seed);
    let mut response = ambient_response(n, a, &mut rng);
    let mut anomaly = vec![0.0; n];
    let mut samples: Option<Vec<f64>> = None;

    match spec.pattern {
        Pattern::Normal => {}
        Pattern::Missing => {
            let keep = (n as f64 * rng.random_range(0.0..0.95)) as usize;
            response.truncate(keep);
            anomaly.truncate(keep);
        }
        Pattern::Minor => {
            let ratio: f64 = rng.random_range(0.005..0.04);
            response.iter_mut().for_each(|v| *v *= ratio);
        }
        Pattern::Outlier => {
            // 1-4% of the samples, many of them saturating the sensor range
            let lo = (n / 100).max(3);
            let count = rng.random_range(lo..=(n / 25).max(lo)).min(n);
            let positions = rand::seq::index::sample(&mut rng, n, count);
            for p in positions.iter() {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                anomaly[p] = sign * rng.random_range(20.0..60.0) * a;
            }
        }
        Pattern::Square => {
            let sep = rng.random_range(8.0..15.0) * a;
            let mid = rng.random_range(-1.0..1.0) * a;
            let period = rng.random_range((n / 20).max(2)..=(n / 2).max(2)) as f64;
            let duty: f64 = rng.random_range(0.3..0.7);
            let phase: f64 = rng.random_range(0.0..1.0);
            let jitter = 0.001 * sep;
            let wave: Vec<f64> = (0..n)
                .map(|t| {
                    let frac = ((t as f64 / period) + phase).fract();
                    let level = if frac < duty { mid + sep / 2.0 } else { mid - sep / 2.0 };
                    level + jitter * gauss(&mut rng)
                })
                .collect();
            // the healthy response is replaced, not superimposed
            for t in 0..n {
                anomaly[t] = wave[t] - response[t];
            }
            samples = Some(wave);
        }
        Pattern::Trend => {
            let rise = rng.random_range(5.0..8.0) * a;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let denom = (n.max(2) - 1) as f64;
            for (t, v) in anomaly.iter_mut().enumerate() {
                *v = sign * rise * t as f64 / denom;
            }
        }
        Pattern::Drift => {
            // random walk conditioned on its terminal displacement:
            // a scaled Brownian bridge plus the straight line to the endpoint
            let disp = rng.random_range(10.0..20.0) * a;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut walk = Vec::with_capacity(n);
            let mut w = 0.0;
            for _ in 0..n {
                walk.push(w);
                w += gauss(&mut rng);
            }
            let denom = (n.max(2) - 1) as f64;
            let end = walk[n - 1];
            for (t, v) in walk.iter_mut().enumerate() {
                *v -= end * t as f64 / denom;
            }
            rescale_to_std(&mut walk, rng.random_range(0.3..0.8) * disp);
            let offset = walk[0];
            for (t, v) in anomaly.iter_mut().enumerate() {
                *v = walk[t] - offset + sign * disp * t as f64 / denom;
            }
        }
        Pattern::Biased => {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let offset = sign * rng.random_range(5.0..8.0) * a;
            anomaly.fill(offset);
        }
        Pattern::Noise => {
            let t3 = StudentT::new(3.0).expect("valid degrees of freedom");
            let mut noise: Vec<f64> = (0..n).map(|_| t3.sample(&mut rng)).collect();
            rescale_to_std(&mut noise, rng.random_range(3.0..6.0) * a);
            anomaly = noise;
        }
    }

    let mut samples = samples.unwrap_or_else(|| {
        response
            .iter()
            .zip(&anomaly)
            .map(|(r, x)| r + x)
            .collect()
    });
    if matches!(spec.pattern, Pattern::Trend | Pattern::Drift) {
        center(&mut samples);
    }
    let segment = TimeSeriesSegment::with_duration(
        samples,
        spec.sample_rate_hz,
        spec.duration_s,
        spec.range_min,
        spec.range_max,
    )?;
    Ok(SegmentParts {
        response,
        anomaly,
        segment,
    })
}

pub fn gen_segment(spec: &PatternSpec) -> Result<TimeSeriesSegment> {
    Ok(gen_parts(spec)?.segment)
}

/// Verifies the defining property of `spec.pattern` on generated parts.
pub fn check_parts(spec: &PatternSpec, parts: &SegmentParts) -> std::result::Result<(), String> {
    let a = spec.base_amplitude;
    let x = &parts.segment.samples;
    let n = spec.len();
    let fail = |what: String| Err(format!("{}: {what}", spec.pattern));
    match spec.pattern {
        Pattern::Normal => {
            let s = std(x);
            if (s - a).abs() > 1e-9 * a || mean(x).abs() > 1e-9 * a {
                return fail(format!("std {s} / mean {} vs amplitude {a}", mean(x)));
            }
        }
        Pattern::Missing => {
            if x.len() >= n {
                return fail(format!("{} of {n} samples present", x.len()));
            }
        }
        Pattern::Minor => {
            if std(x) > 0.05 * a {
                return fail(format!("std {} exceeds 5% of {a}", std(x)));
            }
        }
        Pattern::Outlier => {
            let spikes = parts.anomaly.iter().filter(|v| v.abs() >= 10.0 * a).count();
            if spikes < 3.min(n) {
                return fail(format!("{spikes} spikes"));
            }
        }
        Pattern::Square => {
            let (lo, hi) = x
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let cut = 0.5 * (lo + hi);
            let median = |mut v: Vec<f64>| {
                v.sort_by(|a, b| a.total_cmp(b));
                v[v.len() / 2]
            };
            let low: Vec<f64> = x.iter().copied().filter(|&v| v < cut).collect();
            let high: Vec<f64> = x.iter().copied().filter(|&v| v >= cut).collect();
            if low.is_empty() || high.is_empty() {
                return fail("only one level present".into());
            }
            let (l, h) = (median(low), median(high));
            let tol = 0.01 * (h - l);
            let near = x
                .iter()
                .filter(|&&v| (v - l).abs() <= tol || (v - h).abs() <= tol)
                .count();
            if (near as f64) < 0.95 * x.len() as f64 {
                return fail(format!("only {near} of {} samples near two levels", x.len()));
            }
        }
        Pattern::Trend => {
            let rise = (parts.anomaly[n - 1] - parts.anomaly[0]).abs();
            if rise < 5.0 * a || mean(x).abs() > 1e-9 * a.max(1.0) {
                return fail(format!("ramp rise {rise}, mean {}", mean(x)));
            }
        }
        Pattern::Drift => {
            let disp = (parts.anomaly[n - 1] - parts.anomaly[0]).abs();
            if disp < 5.0 * a || mean(x).abs() > 1e-9 * a.max(1.0) {
                return fail(format!("terminal displacement {disp}, mean {}", mean(x)));
            }
        }
        Pattern::Biased => {
            let first = parts.anomaly[0];
            if first.abs() < 5.0 * a || parts.anomaly.iter().any(|&v| v != first) {
                return fail(format!("offset {first}"));
            }
        }
        Pattern::Noise => {
            let s = std(&parts.anomaly);
            if s < 3.0 * a * (1.0 - 1e-9) {
                return fail(format!("noise std {s} below 3 x {a}"));
            }
        }
    }
    Ok(())
}

/// The two validation cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    One,
    Two,
}

impl Case {
    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Case::One),
            2 => Ok(Case::Two),
            _ => Err(Error::Config(format!("case must be 1 or 2, got {n}"))),
        }
    }

    pub fn number(self) -> u32 {
        match self {
            Case::One => 1,
            Case::Two => 2,
        }
    }

    /// Class list; a label is an index into it.
    pub fn patterns(self) -> &'static [Pattern] {
        match self {
            Case::One => &[
                Pattern::Normal,
                Pattern::Minor,
                Pattern::Outlier,
                Pattern::Square,
                Pattern::Trend,
                Pattern::Drift,
            ],
            Case::Two => &[
                Pattern::Normal,
                Pattern::Minor,
                Pattern::Biased,
                Pattern::Outlier,
                Pattern::Noise,
            ],
        }
    }

    pub fn num_classes(self) -> usize {
        self.patterns().len()
    }

    pub fn class_names(self) -> Vec<String> {
        self.patterns().iter().map(|p| p.tag().to_string()).collect()
    }

    /// Class counts of the full dataset with 'missing' removed.
    pub fn original_counts(self) -> &'static [usize] {
        match self {
            Case::One => &[13575, 1775, 527, 2996, 5778, 679],
            Case::Two => &[19454, 6802, 1169, 289, 578],
        }
    }

    /// Measurement range in sensor units.
    pub fn range(self) -> (f64, f64) {
        match self {
            Case::One => (-1.0, 1.0),
            Case::Two => (-50.0, 50.0),
        }
    }

    /// Per-segment healthy-response std is drawn log-uniformly from this range.
    pub fn amplitude_range(self) -> (f64, f64) {
        match self {
            Case::One => (0.04, 0.07),
            Case::Two => (2.0, 4.0),
        }
    }

    pub fn paper_sample_rate(self) -> f64 {
        match self {
            Case::One => 20.0,
            Case::Two => 50.0,
        }
    }

    /// Original counts scaled by `scale`, apportioned by largest remainder so
    /// the total is `round(scale * original_total)`.
    pub fn scaled_counts(self, scale: f64) -> Vec<usize> {
        apportion(self.original_counts(), scale)
    }
}

/// Largest-remainder apportionment of `counts * scale`.
pub fn apportion(counts: &[usize], scale: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * scale).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * scale).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    let mut left = target.saturating_sub(out.iter().sum());
    for &i in order.iter().cycle().take(left * counts.len().max(1)) {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub feature: FeatureVector,
    pub label: usize,
}

/// Segment geometry for generated datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenOptions {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
}

impl Default for GenOptions {
    /// Desk scale: 3,600 samples per one-hour segment.
    fn default() -> Self {
        GenOptions {
            sample_rate_hz: DESK_SEGMENT_LEN as f64 / 3600.0,
            duration_s: 3600.0,
        }
    }
}

impl GenOptions {
    pub fn paper(case: Case) -> Self {
        GenOptions {
            sample_rate_hz: case.paper_sample_rate(),
            duration_s: 3600.0,
        }
    }
}

/// Spec of the `index`-th segment of a dataset; amplitude and seed derive
/// from `(seed, index)`.
pub fn sample_spec(case: Case, pattern: Pattern, seed: u64, index: u64, opts: &GenOptions) -> PatternSpec {
    let sample_seed = derive_indexed(seed, "segment", index);
    let mut rng = rng_from(derive_indexed(seed, "amplitude", index));
    let (lo, hi) = case.amplitude_range();
    let base_amplitude = (rng.random_range(lo.ln()..hi.ln())).exp();
    let (range_min, range_max) = case.range();
    PatternSpec {
        pattern,
        base_amplitude,
        sample_rate_hz: opts.sample_rate_hz,
        duration_s: opts.duration_s,
        range_min,
        range_max,
        seed: sample_seed,
    }
}

/// Generates `count` IERFH samples per listed pattern, class by class.
pub fn gen_dataset(case: Case, counts: &[(Pattern, usize)], seed: u64) -> Result<Vec<LabeledSample>> {
    gen_dataset_with(case, counts, seed, &GenOptions::default())
}

pub fn gen_dataset_with(
    case: Case,
    counts: &[(Pattern, usize)],
    seed: u64,
    opts: &GenOptions,
) -> Result<Vec<LabeledSample>> {
    let patterns = case.patterns();
    let mut jobs = Vec::new();
    for &(pattern, count) in counts {
        let label = patterns.iter().position(|&p| p == pattern).ok_or_else(|| {
            Error::Config(format!("pattern '{pattern}' is not part of case {}", case.number()))
        })?;
        for _ in 0..count {
            jobs.push((pattern, label));
        }
    }
    jobs.into_par_iter()
        .enumerate()
        .map(|(i, (pattern, label))| {
            let spec = sample_spec(case, pattern, seed, i as u64, opts);
            let channel = (i % 38) as u32;
            let hour = (i / 38) as u32;
            let segment = gen_segment(&spec)?.with_provenance(channel, hour);
            Ok(LabeledSample {
                feature: ierfh(&segment)?,
                label,
            })
        })
        .collect()
}

/// Pairs a case's class list with per-class counts.
pub fn case_counts(case: Case, counts: &[usize]) -> Result<Vec<(Pattern, usize)>> {
    if counts.len() != case.num_classes() {
        return Err(Error::Config(format!(
            "case {} has {} classes, got {} counts",
            case.number(),
            case.num_classes(),
            counts.len()
        )));
    }
    Ok(case.patterns().iter().copied().zip(counts.iter().copied()).collect())
}
