//! Experiment configuration: defaults, profiles and key=value overrides.

use std::path::PathBuf;

use crate::datagen::{Case, GenOptions};
use crate::error::{Error, Result};
use crate::harness::LowShotSpec;
use crate::models::Method;
use crate::ssl::AugmentationConfig;

/// Prefix of environment variables that override config keys
/// (`SHMSSL_PRETRAIN_EPOCHS=5` sets `pretrain_epochs`).
pub const ENV_PREFIX: &str = "SHMSSL_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case: Case,
    pub methods: Vec<Method>,
    pub low_shot: Vec<LowShotSpec>,
    /// Label / validation / test fractions.
    pub split: [f64; 3],
    pub scale: f64,
    pub repeats: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub sup_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub simclr_temperature: f64,
    pub mixup_temperature: f64,
    pub augment: AugmentationConfig,
    /// Pre-train on every sample instead of the label + validation splits.
    pub paper_pool: bool,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Write a checkpoint for every fine-tuned repeat.
    pub save_finetuned: bool,
}

impl ExperimentConfig {
    /// Desk profile: 1/10 of the dataset, 3,600-sample segments, pre-train
    /// 40 / fine-tune 20 / supervised 40 epochs.
    pub fn desk() -> Self {
        ExperimentConfig {
            case: Case::One,
            methods: Method::ALL.to_vec(),
            low_shot: vec![LowShotSpec::named(Case::One, "D1").expect("standard name")],
            split: [0.2, 0.3, 0.5],
            scale: 0.1,
            repeats: 5,
            seed: 1,
            out_dir: PathBuf::from("out"),
            pretrain_epochs: 40,
            finetune_epochs: 20,
            sup_epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            simclr_temperature: 0.5,
            mixup_temperature: 0.1,
            augment: AugmentationConfig::default(),
            paper_pool: false,
            sample_rate_hz: GenOptions::default().sample_rate_hz,
            duration_s: 3600.0,
            save_finetuned: false,
        }
    }

    /// Paper profile: full counts, full-rate segments, 200 / 50 / 200 epochs.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.apply_profile(Profile::Paper);
        c
    }

    fn apply_profile(&mut self, profile: Profile) {
        match profile {
            Profile::Desk => {
                let d = Self::desk();
                self.scale = d.scale;
                self.pretrain_epochs = d.pretrain_epochs;
                self.finetune_epochs = d.finetune_epochs;
                self.sup_epochs = d.sup_epochs;
                self.sample_rate_hz = d.sample_rate_hz;
            }
            Profile::Paper => {
                self.scale = 1.0;
                self.pretrain_epochs = 200;
                self.finetune_epochs = 50;
                self.sup_epochs = 200;
                self.sample_rate_hz = self.case.paper_sample_rate();
            }
        }
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            sample_rate_hz: self.sample_rate_hz,
            duration_s: self.duration_s,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.case.class_names()
    }

    /// Builds a config from ordered `(key, value)` pairs (later pairs win).
    /// A `profile` key is applied first, `case` next (it changes the meaning
    /// of low-shot names and the case sample rate), the rest after.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let last = |key: &str| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let mut cfg = Self::desk();
        if let Some(c) = last("case") {
            cfg.case = Case::from_number(parse(c, "case")?)?;
        }
        if let Some(p) = last("profile") {
            let profile = match p.trim() {
                "desk" => Profile::Desk,
                "paper" => Profile::Paper,
                other => return Err(Error::Config(format!("unknown profile '{other}'"))),
            };
            cfg.apply_profile(profile);
        }
        cfg.low_shot = vec![LowShotSpec::named(cfg.case, "D1")?];
        for (k, v) in pairs {
            if k != "case" && k != "profile" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves defaults < config file < environment < explicit overrides.
    pub fn resolve(
        file_text: Option<&str>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut pairs = match file_text {
            Some(t) => parse_config_text(t)?,
            None => Vec::new(),
        };
        let mut env_pairs: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        env_pairs.sort();
        pairs.extend(env_pairs);
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "case" => self.case = Case::from_number(parse(v, key)?)?,
            "methods" => {
                self.methods = v
                    .split(',')
                    .map(|m| m.trim().parse::<Method>())
                    .collect::<Result<_>>()?;
            }
            "low_shot" => {
                self.low_shot = v
                    .split(';')
                    .map(|s| LowShotSpec::parse(self.case, s))
                    .collect::<Result<_>>()?;
            }
            "split" => {
                let parts: Vec<f64> = v.split(',').map(|p| parse(p, key)).collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(Error::Config(format!("split needs 3 ratios, got '{v}'")));
                }
                self.split = [parts[0], parts[1], parts[2]];
            }
            "scale" => self.scale = parse(v, key)?,
            "repeats" => self.repeats = parse(v, key)?,
            "seed" => self.seed = parse(v, key)?,
            "out" => self.out_dir = PathBuf::from(v),
            "pretrain_epochs" => self.pretrain_epochs = parse(v, key)?,
            "finetune_epochs" => self.finetune_epochs = parse(v, key)?,
            "sup_epochs" => self.sup_epochs = parse(v, key)?,
            "batch_size" => self.batch_size = parse(v, key)?,
            "lr" => self.lr = parse(v, key)?,
            "simclr_temperature" => self.simclr_temperature = parse(v, key)?,
            "mixup_temperature" => self.mixup_temperature = parse(v, key)?,
            "crop_min_fraction" => self.augment.crop_min_fraction = parse(v, key)?,
            "noise_sigma" => self.augment.noise_sigma = parse(v, key)?,
            "mixup_alpha" => self.augment.mixup_alpha = parse(v, key)?,
            "pool" => {
                self.paper_pool = match v {
                    "all" => true,
                    "label_val" => false,
                    _ => return Err(Error::Config(format!("pool must be 'all' or 'label_val', got '{v}'"))),
                }
            }
            "sample_rate_hz" => self.sample_rate_hz = parse(v, key)?,
            "duration_s" => self.duration_s = parse(v, key)?,
            "save_finetuned" => self.save_finetuned = parse(v, key)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        crate::harness::check_ratios(self.split)?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.low_shot.is_empty() {
            return Err(Error::Config("no low-shot set selected".into()));
        }
        if let Some(s) = self.low_shot.iter().find(|s| s.counts.len() != self.case.num_classes()) {
            return Err(Error::Config(format!(
                "low-shot set {s} has {} counts for {} classes",
                s.counts.len(),
                self.case.num_classes()
            )));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.pretrain_epochs == 0 {
            return Err(Error::Config("pretrain_epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(self.simclr_temperature > 0.0) || !(self.mixup_temperature > 0.0) {
            return Err(Error::Config("lr and temperatures must be positive".into()));
        }
        if !(self.sample_rate_hz > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::Config("sample_rate_hz and duration_s must be positive".into()));
        }
        self.augment.validate()
    }

    /// Canonical `key=value` dump; reading it back gives the same config.
    pub fn to_text(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.tag()).collect();
        let low_shot: Vec<String> = self
            .low_shot
            .iter()
            .map(|s| {
                if s.name.starts_with('D') {
                    s.name.clone()
                } else {
                    s.counts.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
                }
            })
            .collect();
        let lines = [
            format!("case={}", self.case.number()),
            format!("methods={}", methods.join(",")),
            format!("low_shot={}", low_shot.join(";")),
            format!("split={},{},{}", self.split[0], self.split[1], self.split[2]),
            format!("scale={}", self.scale),
            format!("repeats={}", self.repeats),
            format!("seed={}", self.seed),
            format!("out={}", self.out_dir.display()),
            format!("pretrain_epochs={}", self.pretrain_epochs),
            format!("finetune_epochs={}", self.finetune_epochs),
            format!("sup_epochs={}", self.sup_epochs),
            format!("batch_size={}", self.batch_size),
            format!("lr={}", self.lr),
            format!("simclr_temperature={}", self.simclr_temperature),
            format!("mixup_temperature={}", self.mixup_temperature),
            format!("crop_min_fraction={}", self.augment.crop_min_fraction),
            format!("noise_sigma={}", self.augment.noise_sigma),
            format!("mixup_alpha={}", self.augment.mixup_alpha),
            format!("pool={}", if self.paper_pool { "all" } else { "label_val" }),
            format!("sample_rate_hz={}", self.sample_rate_hz),
            format!("duration_s={}", self.duration_s),
            format!("save_finetuned={}", self.save_finetuned),
        ];
        lines.join("\n") + "\n"
    }
}

fn parse<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'")))
}

/// Flat `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{raw}'", i + 1)))?;
        out.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
    }
    Ok(out)
}
