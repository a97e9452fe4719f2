//! Stratified label/validation/test splits and low-shot draws.

use std::fmt;

use rand::seq::SliceRandom;

use crate::datagen::{apportion, Case, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::{derive_indexed, rng_from};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub label: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

pub fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    Ok(())
}

/// Per-class sizes of a three-way split of `n`, by largest remainder.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let weights: Vec<usize> = ratios.iter().map(|r| (r * 1e9).round() as usize).collect();
    let total: usize = weights.iter().sum();
    let c = apportion(&weights, n as f64 / total as f64);
    [c[0], c[1], c[2]]
}

/// Shuffles each class with its own seeded stream and cuts it by `ratios`
/// (label, validation, test). Output keeps classes in ascending order.
pub fn split_dataset(samples: &[LabeledSample], ratios: [f64; 3], seed: u64) -> Result<Split> {
    check_ratios(ratios)?;
    if samples.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    let k = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let mut out = Split::default();
    for class in 0..k {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Config(format!(
                "class {class} has {} samples, fewer than the 3 splits",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_from(derive_indexed(seed, "split", class as u64)));
        let [a, b, _] = split_counts(idx.len(), ratios);
        let pick = |r: &[usize]| r.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        out.label.extend(pick(&idx[..a]));
        out.validation.extend(pick(&idx[a..a + b]));
        out.test.extend(pick(&idx[a + b..]));
    }
    Ok(out)
}

/// Per-class counts of a labeled training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LowShotSpec {
    pub name: String,
    pub counts: Vec<usize>,
}

impl fmt::Display for LowShotSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl LowShotSpec {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// The six standard sets: D1-D3 balanced (10, 30, 50 per class), D4-D6
    /// unbalanced.
    pub fn named(case: Case, name: &str) -> Result<Self> {
        let k = case.num_classes();
        let counts = match (case, name.trim().to_ascii_uppercase().as_str()) {
            (_, "D1") => vec![10; k],
            (_, "D2") => vec![30; k],
            (_, "D3") => vec![50; k],
            (Case::One, "D4") => vec![50, 30, 30, 30, 50, 30],
            (Case::One, "D5") => vec![100, 50, 50, 50, 80, 50],
            (Case::One, "D6") => vec![200, 50, 50, 50, 150, 50],
            (Case::Two, "D4") => vec![30, 20, 20, 10, 10],
            (Case::Two, "D5") => vec![50, 50, 30, 30, 30],
            (Case::Two, "D6") => vec![100, 80, 50, 50, 50],
            _ => return Err(Error::Config(format!("unknown low-shot set '{name}'"))),
        };
        Ok(LowShotSpec {
            name: name.trim().to_ascii_uppercase(),
            counts,
        })
    }

    pub fn standard(case: Case) -> Vec<Self> {
        ["D1", "D2", "D3", "D4", "D5", "D6"]
            .iter()
            .map(|n| Self::named(case, n).expect("standard names"))
            .collect()
    }

    /// `D1`..`D6`, a single per-class count (`25`), or one count per class
    /// (`50,30,30,30,50,30`).
    pub fn parse(case: Case, text: &str) -> Result<Self> {
        let t = text.trim();
        if t.to_ascii_uppercase().starts_with('D') {
            return Self::named(case, t);
        }
        let nums: Vec<usize> = t
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad low-shot count '{p}' in '{t}'")))
            })
            .collect::<Result<_>>()?;
        let k = case.num_classes();
        let counts = match nums.len() {
            1 => vec![nums[0]; k],
            n if n == k => nums,
            n => {
                return Err(Error::Config(format!(
                    "low-shot spec '{t}' has {n} counts, case {} has {k} classes",
                    case.number()
                )))
            }
        };
        let name = counts.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
        Ok(LowShotSpec { name, counts })
    }
}

/// Draws `counts[c]` samples of each class `c` uniformly without
/// replacement from `label_split`.
pub fn draw_low_shot(
    label_split: &[LabeledSample],
    counts: &[usize],
    class_names: &[String],
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (class, &want) in counts.iter().enumerate() {
        let mut idx: Vec<usize> = (0..label_split.len())
            .filter(|&i| label_split[i].label == class)
            .collect();
        if want > idx.len() {
            let name = class_names.get(class).map_or("?", String::as_str);
            return Err(Error::Config(format!(
                "class {class} ({name}) has {} labeled samples, {want} requested",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_from(derive_indexed(seed, "low-shot", class as u64)));
        out.extend(idx[..want].iter().map(|&i| label_split[i].clone()));
    }
    Ok(out)
}
