//! `shmssl` command-line driver.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shmssl::datagen::{gen_segment, sample_spec};
use shmssl::features::{load_features, save_features, FeatureRecord};
use shmssl::finetune::{evaluate, finetune};
use shmssl::harness::{
    emit_report, finetune_config, prepare_data, pretrain_config, records_to_samples, run_experiment,
    ExperimentConfig, Layout, ResultTable,
};
use shmssl::metrics::{overall, write_per_class_csv};
use shmssl::models::{load_checkpoint, save_checkpoint, Method, ModelBundle};
use shmssl::reduction::{detect_missing, ierfh, read_segment_values, write_segment_csv, TimeSeriesSegment};
use shmssl::rng::derive_seed;
use shmssl::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "shmssl", version, about = "Self-supervised pre-training and low-shot fine-tuning for SHM anomaly detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Desk-scale profile (default)
    #[arg(long, global = true, conflicts_with = "paper")]
    desk: bool,
    /// Full-scale profile
    #[arg(long, global = true)]
    paper: bool,
    /// Pre-train on every sample, test split included (unlabeled)
    #[arg(long, global = true)]
    paper_pool: bool,
    /// Dataset case (1 or 2)
    #[arg(long, global = true)]
    case: Option<u32>,
    /// Extra config override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// More log output
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset, split it and draw the low-shot sets
    GenData {
        /// Also dump this many raw segments per class as CSV under raw/
        #[arg(long, default_value_t = 0)]
        raw_per_class: usize,
    },
    /// Reduce raw `time,value` CSV segments to IERFH features
    Reduce {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        sample_rate: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        range_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        range_max: Option<f64>,
        /// Class index stored with every row
        #[arg(long)]
        label: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pre-train one method's encoder
    Pretrain {
        #[arg(long)]
        method: Method,
        /// Feature files forming the pool (default: label + validation splits)
        #[arg(long)]
        data: Vec<PathBuf>,
    },
    /// Fine-tune a classifier on a labeled low-shot set
    Finetune {
        #[arg(long)]
        method: Method,
        /// Pre-trained checkpoint (default: checkpoints/pretrain_<method>.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Default: data/lowshot_<first set>.ierfh
        #[arg(long)]
        train: Option<PathBuf>,
        /// Default: data/validation.ierfh
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Evaluate a fine-tuned checkpoint
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Default: data/test.ierfh
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report file suffix (default: checkpoint file stem)
        #[arg(long)]
        name: Option<String>,
    },
    /// Full pipeline: generate, pre-train, fine-tune, evaluate, report
    Run,
    /// Rebuild the report files from a runs.csv
    Report {
        /// Default: report/runs.csv
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Default: report/
        #[arg(long)]
        dest: Option<PathBuf>,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "generate",
            Command::Reduce { .. } => "reduce",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::Run => "run",
            Command::Report { .. } => "report",
        }
    }

    fn method(&self) -> String {
        match self {
            Command::Pretrain { method, .. } | Command::Finetune { method, .. } => method.to_string(),
            _ => "-".into(),
        }
    }
}

fn resolve_config(g: &Global) -> Result<ExperimentConfig> {
    let file = match &g.config {
        Some(p) => Some(fs::read_to_string(p)?),
        None => None,
    };
    let mut overrides = Vec::new();
    if g.paper {
        overrides.push(("profile".to_string(), "paper".to_string()));
    } else if g.desk {
        overrides.push(("profile".to_string(), "desk".to_string()));
    }
    if let Some(c) = g.case {
        overrides.push(("case".into(), c.to_string()));
    }
    if let Some(s) = g.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(o) = &g.out {
        overrides.push(("out".into(), o.display().to_string()));
    }
    if g.paper_pool {
        overrides.push(("pool".into(), "all".into()));
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        overrides.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
    }
    ExperimentConfig::resolve(file.as_deref(), std::env::vars(), &overrides)
}

fn load_samples(path: &Path, k: usize) -> Result<Vec<shmssl::datagen::LabeledSample>> {
    records_to_samples(load_features(path)?, k)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, layout: &Layout, raw_per_class: usize) -> Result<()> {
    let data = prepare_data(cfg, layout)?;
    let names = cfg.class_names();
    println!("generated {} samples in {}", data.samples.len(), layout.data().display());
    for (c, name) in names.iter().enumerate() {
        let n = data.samples.iter().filter(|s| s.label == c).count();
        println!("  {name}: {n}");
    }
    if raw_per_class > 0 {
        // same indices as the dataset, so raw/<pattern>_<i>.csv reduces to row i
        let raw = layout.root.join("raw");
        fs::create_dir_all(&raw)?;
        let counts = cfg.case.scaled_counts(cfg.scale);
        let data_seed = derive_seed(cfg.seed, "data");
        let mut offset = 0;
        for (&pattern, &count) in cfg.case.patterns().iter().zip(&counts) {
            for i in offset..offset + count.min(raw_per_class) {
                let spec = sample_spec(cfg.case, pattern, data_seed, i as u64, &cfg.gen_options());
                let seg = gen_segment(&spec)?;
                write_file(&raw.join(format!("{pattern}_{i}.csv")), |w| write_segment_csv(&seg, w))?;
            }
            offset += count;
        }
        println!("raw segments in {}", raw.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reduce(
    cfg: &ExperimentConfig,
    layout: &Layout,
    inputs: &[PathBuf],
    sample_rate: Option<f64>,
    duration: Option<f64>,
    range: (Option<f64>, Option<f64>),
    label: Option<usize>,
    output: Option<PathBuf>,
) -> Result<()> {
    let (lo, hi) = cfg.case.range();
    let mut records = Vec::with_capacity(inputs.len());
    for (i, path) in inputs.iter().enumerate() {
        let values = read_segment_values(BufReader::new(File::open(path)?))?;
        let seg = TimeSeriesSegment::with_duration(
            values,
            sample_rate.unwrap_or(cfg.sample_rate_hz),
            duration.unwrap_or(cfg.duration_s),
            range.0.unwrap_or(lo),
            range.1.unwrap_or(hi),
        )?
        .with_provenance(i as u32, 0);
        if detect_missing(&seg) {
            log::warn!("{}: {} of {} samples present", path.display(), seg.samples.len(), seg.expected_len());
        }
        records.push(FeatureRecord {
            feature: ierfh(&seg)?,
            label,
        });
    }
    let out = output.unwrap_or_else(|| layout.data().join("reduced.ierfh"));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_features(&records, &out)?;
    println!("wrote {} feature rows to {}", records.len(), out.display());
    Ok(())
}

fn pretrain_cmd(cfg: &ExperimentConfig, layout: &Layout, method: Method, data: &[PathBuf]) -> Result<()> {
    let files = if !data.is_empty() {
        data.to_vec()
    } else if cfg.paper_pool {
        vec![layout.data().join("dataset.ierfh")]
    } else {
        vec![layout.data().join("label.ierfh"), layout.data().join("validation.ierfh")]
    };
    let mut pool = Vec::new();
    for f in &files {
        pool.extend(load_features(f)?.into_iter().map(|r| r.feature));
    }
    let pc = pretrain_config(cfg, method);
    let (bundle, trace) = shmssl::ssl::pretrain(&pool, &pc)?;
    let tag = method.tag();
    let ckpt = layout.checkpoints().join(format!("pretrain_{tag}.ckpt"));
    fs::create_dir_all(layout.checkpoints())?;
    save_checkpoint(&bundle, &ckpt)?;
    write_file(&layout.traces().join(format!("pretrain_{tag}.csv")), |w| trace.write_csv(w))?;
    println!(
        "{tag}: {} epochs on {} samples, loss {:.6} -> {:.6}, checkpoint {}",
        trace.losses.len(),
        pool.len(),
        trace.first().unwrap_or(f64::NAN),
        trace.last().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn finetune_cmd(
    cfg: &ExperimentConfig,
    layout: &Layout,
    method: Method,
    checkpoint: Option<PathBuf>,
    train: Option<PathBuf>,
    validation: Option<PathBuf>,
    repeat: usize,
) -> Result<()> {
    let k = cfg.case.num_classes();
    let tag = method.tag();
    let pretrained = match (method, checkpoint) {
        (_, Some(p)) => Some(load_checkpoint(p)?),
        (Method::Sup, None) => None,
        (_, None) => Some(load_checkpoint(layout.checkpoints().join(format!("pretrain_{tag}.ckpt")))?),
    };
    let train = train.unwrap_or_else(|| layout.data().join(format!("lowshot_{}.ierfh", cfg.low_shot[0])));
    let validation = validation.unwrap_or_else(|| layout.data().join("validation.ierfh"));
    let low_shot = load_samples(&train, k)?;
    let val = load_samples(&validation, k)?;
    let fc = finetune_config(cfg, method, repeat);
    let res = finetune(pretrained.as_ref(), &low_shot, &val, k, &fc)?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    let best = res.best().clone();
    let mut bundle = ModelBundle::empty(method, fc.seed);
    bundle.classifier = Some(res.classifier.clone());
    let ckpt = layout.checkpoints().join(format!("finetune_{tag}_r{repeat}.ckpt"));
    fs::create_dir_all(layout.checkpoints())?;
    save_checkpoint(&bundle, &ckpt)?;
    write_file(&layout.traces().join(format!("finetune_{tag}_r{repeat}.csv")), |w| res.write_trace_csv(w))?;
    println!(
        "{tag} repeat {repeat}: best epoch {} (validation macro F1 {:.4}), checkpoint {}",
        best.epoch,
        best.val_macro_f1,
        ckpt.display()
    );
    Ok(())
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    layout: &Layout,
    checkpoint: &Path,
    data: Option<PathBuf>,
    name: Option<String>,
) -> Result<()> {
    let bundle = load_checkpoint(checkpoint)?;
    let classifier = bundle
        .classifier
        .ok_or_else(|| Error::Input(format!("{} holds no classifier", checkpoint.display())))?;
    let names = cfg.class_names();
    if classifier.num_classes() != names.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, case {} has {}",
            classifier.num_classes(),
            cfg.case.number(),
            names.len()
        )));
    }
    let data = data.unwrap_or_else(|| layout.data().join("test.ierfh"));
    let samples = load_samples(&data, names.len())?;
    let cm = evaluate(&classifier, &samples, names)?;
    let name = name.unwrap_or_else(|| {
        checkpoint
            .file_stem()
            .map_or("eval".into(), |s| s.to_string_lossy().into_owned())
    });
    let report = layout.report();
    write_file(&report.join(format!("confusion_{name}.csv")), |w| cm.write_csv(w))?;
    write_file(&report.join(format!("per_class_{name}.csv")), |w| write_per_class_csv(&cm, w))?;
    let o = overall(&cm);
    println!(
        "{} samples: accuracy {:.4}, macro F1 {:.4} (reports in {})",
        samples.len(),
        o.accuracy,
        o.macro_f1,
        report.display()
    );
    Ok(())
}

fn print_table(path: &Path) -> Result<()> {
    print!("{}", fs::read_to_string(path)?);
    Ok(())
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    match &cli.command {
        Command::GenData { raw_per_class } => gen_data(cfg, &layout, *raw_per_class),
        Command::Reduce {
            inputs,
            sample_rate,
            duration,
            range_min,
            range_max,
            label,
            output,
        } => reduce(
            cfg,
            &layout,
            inputs,
            *sample_rate,
            *duration,
            (*range_min, *range_max),
            *label,
            output.clone(),
        ),
        Command::Pretrain { method, data } => pretrain_cmd(cfg, &layout, *method, data),
        Command::Finetune {
            method,
            checkpoint,
            train,
            validation,
            repeat,
        } => finetune_cmd(
            cfg,
            &layout,
            *method,
            checkpoint.clone(),
            train.clone(),
            validation.clone(),
            *repeat,
        ),
        Command::Evaluate { checkpoint, data, name } => evaluate_cmd(cfg, &layout, checkpoint, data.clone(), name.clone()),
        Command::Run => {
            let out = run_experiment(cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            print_table(&layout.report().join("f1_table.csv"))
        }
        Command::Report { runs, dest } => {
            let runs = runs.clone().unwrap_or_else(|| layout.report().join("runs.csv"));
            let table = ResultTable::load_runs(&runs)?;
            let dest = dest.clone().unwrap_or_else(|| layout.report());
            emit_report(&table, &dest)?;
            print_table(&dest.join("f1_table.csv"))
        }
    }
}

fn error_line(err: &Error, stage: &str, method: &str, seed: u64) -> String {
    let (stage, method, seed, message) = match err {
        Error::Stage {
            stage,
            method,
            seed,
            source,
        } => (stage.to_string(), method.clone(), *seed, source.to_string()),
        other => (stage.to_string(), method.to_string(), seed, other.to_string()),
    };
    let message = message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!(
        "error: stage={stage} method={method} seed={seed} kind={} message=\"{message}\"",
        err.kind()
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let stage = cli.command.stage();
    let method = cli.command.method();
    let cfg = match resolve_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_line(&e, "config", &method, cli.global.seed.unwrap_or(0)));
            return ExitCode::FAILURE;
        }
    };
    match execute(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e, stage, &method, cfg.seed));
            ExitCode::FAILURE
        }
    }
}
