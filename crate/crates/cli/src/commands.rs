use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tfga_core::data::Scene;
use tfga_core::data::{
    read_eeg, read_wav, synth_dataset, write_wav, Dataset, Split, SynthConfig, WavEncoding,
    DEFAULT_FRACTIONS,
};
use tfga_core::eeg::read_montage;
use tfga_core::gradsuite::{run_suite, DOUBLE_TOLERANCE};
use tfga_core::metrics::MetricReport;
use tfga_core::train::{evaluate, init_model, train, Checkpoint, Model, TrainEvent};

use crate::config::{parse_sweep, RunConfig};
use crate::rundir::{check_new_file, prepare_dir};
use crate::usage;

#[derive(Debug, Parser)]
#[command(name = "tfga", version, about = "EEG-guided target speaker extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with a train/validation/test manifest.
    Synth(SynthArgs),
    /// Train a model, or a sweep of models, into a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Extract the attended speaker from one mixture.
    Extract(ExtractArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Print the default run configuration as TOML.
    DefaultConfig,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub electrodes: Option<usize>,
    #[arg(long)]
    pub sir_db: Option<f64>,
    #[arg(long)]
    pub eeg_snr_db: Option<f64>,
    #[arg(long)]
    pub fs_audio: Option<f64>,
    #[arg(long)]
    pub fs_eeg: Option<f64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value`, e.g. `separator.R=3` or `lr=3e-4`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// `key=a..b` or `key=v1,v2,...`; one run per value.
    #[arg(long, value_name = "KEY=VALUES")]
    pub sweep: Option<String>,
    /// Dataset directory, overriding `data.dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run configuration the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report JSON destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mixture: PathBuf,
    #[arg(long)]
    pub eeg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = DOUBLE_TOLERANCE)]
    pub tolerance: f64,
    /// Test fixture: scales the named op's gradient by 1.01.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}

pub fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    if a.scenes == 0 {
        return Err(usage("--scenes must be at least 1"));
    }
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        fs_audio: a.fs_audio.unwrap_or(d.fs_audio),
        fs_eeg: a.fs_eeg.unwrap_or(d.fs_eeg),
        duration: a.duration.unwrap_or(d.duration),
        electrodes: a.electrodes.unwrap_or(d.electrodes),
        sir_db: a.sir_db.unwrap_or(d.sir_db),
        eeg_snr_db: a.eeg_snr_db.unwrap_or(d.eeg_snr_db),
    };
    cfg.validate()?;
    prepare_dir(&a.out, "manifest.json", a.force)?;
    let m = synth_dataset(&a.out, a.scenes, a.seed, &cfg, DEFAULT_FRACTIONS)?;
    println!(
        "wrote {} scenes to {} ({} train / {} validation / {} test)",
        a.scenes,
        a.out.display(),
        m.splits.train.len(),
        m.splits.validation.len(),
        m.splits.test.len()
    );
    Ok(())
}

/// What one finished training run reports.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub dir: PathBuf,
    pub trainable_params: usize,
    pub steps: usize,
    pub best_epoch: usize,
    pub eval_split: String,
    pub report: MetricReport,
}

pub fn resolve_config(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(a.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    for o in &a.overrides {
        cfg.apply_override(o).map_err(|e| usage(format!("{e:#}")))?;
    }
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
    }
    Ok(cfg)
}

pub fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let base = resolve_config(&a)?;
    let Some(spec) = &a.sweep else {
        preflight(&[("run", &base)])?;
        let dir = base.run_root().join(&base.run.name);
        let s = train_run(&base, &dir, &base.run.name, a.force)?;
        println!("{}", s.report.table());
        return Ok(());
    };

    let (key, values) = parse_sweep(spec).map_err(|e| usage(format!("{e:#}")))?;
    let leaf = key.rsplit('.').next().unwrap_or(&key).to_string();
    let mut runs = Vec::new();
    for v in &values {
        let mut c = base.clone();
        c.apply_override(&format!("{key}={v}"))
            .map_err(|e| usage(format!("sweep value {v}: {e:#}")))?;
        runs.push((format!("{leaf}{v}"), c));
    }
    let labelled: Vec<(&str, &RunConfig)> = runs.iter().map(|(n, c)| (n.as_str(), c)).collect();
    preflight(&labelled)?;

    let root = base.run_root().join(&base.run.name);
    prepare_dir(&root, "sweep.json", a.force)?;
    let mut summaries = Vec::new();
    for (name, c) in &runs {
        eprintln!("== {key} = {} ==", &name[leaf.len()..]);
        summaries.push(train_run(c, &root.join(name), name, a.force)?);
    }
    let table = sweep_table(&key, &leaf, &summaries);
    write_text(&root.join("sweep.md"), &table)?;
    let json = serde_json::to_string_pretty(&SweepRecord {
        key: &key,
        runs: &summaries,
    })?;
    write_text(&root.join("sweep.json"), &json)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    key: &'a str,
    runs: &'a [RunSummary],
}

/// Lists every configuration problem of every run before anything starts.
fn preflight(runs: &[(&str, &RunConfig)]) -> anyhow::Result<()> {
    let mut lines = Vec::new();
    for (name, c) in runs {
        for p in c.problems() {
            let line = if runs.len() > 1 {
                format!("{name}: {p}")
            } else {
                p
            };
            if !lines.contains(&line) {
                lines.push(line);
            }
        }
    }
    if lines.is_empty() {
        return Ok(());
    }
    Err(usage(format!(
        "invalid configuration ({} problems):\n  - {}",
        lines.len(),
        lines.join("\n  - ")
    )))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Trains one configuration into `dir` and scores the best checkpoint.
pub fn train_run(
    cfg: &RunConfig,
    dir: &Path,
    name: &str,
    force: bool,
) -> anyhow::Result<RunSummary> {
    let data_dir = cfg
        .data
        .dir
        .as_deref()
        .ok_or_else(|| usage("data.dir is not set"))?;
    let ds = Dataset::open(data_dir)?;
    let train_set = ds.load_split(Split::Train)?;
    let val_set = ds.load_split(Split::Validation)?;
    if train_set.is_empty() {
        return Err(usage(format!(
            "dataset {} has no training scenes",
            data_dir.display()
        )));
    }
    let montage = match &cfg.data.montage {
        Some(p) => Some(read_montage(p)?),
        None => train_set[0].eeg.montage.clone(),
    };
    let mut model = init_model(&cfg.train, montage.as_ref())?;

    prepare_dir(dir, "config.toml", force)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let mut trace = create(&dir.join("loss_trace.csv"))?;
    writeln!(trace, "step,epoch,lr,loss")?;
    let mut epochs = create(&dir.join("epochs.jsonl"))?;
    let best_path = dir.join("best.ckpt");
    let started = Instant::now();

    let mut io_err: Option<anyhow::Error> = None;
    let outcome = train(&mut model, &train_set, &val_set, &cfg.train, |ev| {
        let r: anyhow::Result<()> =
            (|| {
                match ev {
                    TrainEvent::Step {
                        step,
                        epoch,
                        loss,
                        lr,
                    } => writeln!(trace, "{step},{epoch},{lr},{loss}")?,
                    TrainEvent::Epoch(log) => {
                        writeln!(epochs, "{}", serde_json::to_string(log)?)?;
                        eprintln!(
                        "[{name}] epoch {} lr {:.3e} loss {:.4} train SI-SDR {:.2} dB{} ({:.0} s)",
                        log.epoch,
                        log.lr,
                        log.train_loss,
                        log.train_si_sdr,
                        log.val_si_sdr.map(|v| format!(" val {v:.2} dB")).unwrap_or_default(),
                        started.elapsed().as_secs_f64()
                    );
                    }
                    TrainEvent::Best(ck) => ck.save(&best_path)?,
                }
                Ok(())
            })();
        if let Err(e) = r {
            io_err = Some(e);
            return Err(tfga_core::Error::Validation(
                "stopping after an output error".into(),
            ));
        }
        Ok(())
    });
    if let Some(e) = io_err {
        return Err(e.context(format!("writing run outputs in {}", dir.display())));
    }
    trace.flush()?;
    epochs.flush()?;
    let outcome = outcome.with_context(|| format!("training run {name}"))?;
    outcome.last.save(&dir.join("last.ckpt"))?;

    let (split, scenes) = eval_scenes(&ds, train_set)?;
    let best = outcome.best.clone();
    let best_epoch = best.epoch;
    let report = evaluate(&best.into_model(), &scenes)?;
    write_text(&dir.join("report.json"), &report.to_json())?;
    Ok(RunSummary {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        trainable_params: model.params.trainable_count(),
        steps: outcome.step_losses.len(),
        best_epoch,
        eval_split: split.to_string(),
        report,
    })
}

/// Test split, else validation, else the training scenes.
fn eval_scenes(ds: &Dataset, train_set: Vec<Scene>) -> anyhow::Result<(&'static str, Vec<Scene>)> {
    for (name, split) in [("test", Split::Test), ("validation", Split::Validation)] {
        let s = ds.load_split(split)?;
        if !s.is_empty() {
            return Ok((name, s));
        }
    }
    Ok(("train", train_set))
}

pub fn sweep_table(key: &str, leaf: &str, runs: &[RunSummary]) -> String {
    let mut out = format!(
        "| {key} | params | steps | best epoch | split | SI-SDR (dB) | SI-SDRi (dB) | STOI | ESTOI |\n\
         |---|---|---|---|---|---|---|---|---|\n"
    );
    for r in runs {
        let m = &r.report.model;
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.2} | {:.2} | {:.3} | {:.3} |\n",
            &r.name[leaf.len()..],
            r.trainable_params,
            r.steps,
            r.best_epoch,
            r.eval_split,
            m.si_sdr.mean,
            m.si_sdri.mean,
            m.stoi.mean,
            m.estoi.mean
        ));
    }
    out
}

/// Loads a checkpoint and checks it against `config`, or against the
/// `config.toml` beside it when no config is given.
fn load_checked(
    checkpoint: &Path,
    config: Option<&Path>,
) -> anyhow::Result<(Model, Option<RunConfig>)> {
    let ck = Checkpoint::load(checkpoint)?;
    let sibling = checkpoint
        .parent()
        .map(|p| p.join("config.toml"))
        .filter(|p| p.is_file());
    let cfg_path = config.map(Path::to_path_buf).or(sibling);
    let cfg = match &cfg_path {
        Some(p) => {
            let c = RunConfig::load(Some(p)).map_err(|e| usage(format!("{e:#}")))?;
            ck.check_config(&c.train.model)
                .with_context(|| format!("{} against {}", checkpoint.display(), p.display()))?;
            Some(c)
        }
        None => None,
    };
    Ok((ck.into_model(), cfg))
}

pub fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let split: Split = a.split.parse()?;
    if let Some(out) = &a.out {
        check_new_file(out, a.force)?;
    }
    let (model, cfg) = load_checked(&a.checkpoint, a.config.as_deref())?;
    let data = a
        .data
        .clone()
        .or_else(|| cfg.and_then(|c| c.data.dir))
        .ok_or_else(|| usage("no dataset: pass --data or a config with data.dir"))?;
    let scenes = Dataset::open(&data)?.load_split(split)?;
    if scenes.is_empty() {
        return Err(usage(format!(
            "split {} of {} is empty",
            a.split,
            data.display()
        )));
    }
    let report = evaluate(&model, &scenes)?;
    if let Some(out) = &a.out {
        write_text(out, &report.to_json())?;
    }
    print!("{}", report.table());
    Ok(())
}

pub fn cmd_extract(a: ExtractArgs) -> anyhow::Result<()> {
    check_new_file(&a.out, a.force)?;
    let (model, _) = load_checked(&a.checkpoint, a.config.as_deref())?;
    let mixture = read_wav(&a.mixture)?;
    let eeg = read_eeg(&a.eeg)?;
    let est = model.separate(&mixture, &eeg)?;
    write_wav(&a.out, &est, WavEncoding::Float32)?;
    println!(
        "wrote {} ({} samples, {:.3} s)",
        a.out.display(),
        est.len(),
        est.duration()
    );
    Ok(())
}

pub fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let checks = run_suite(a.tolerance, a.corrupt.as_deref())?;
    println!(
        "{:<20} {:>12} {:>9} {:>6}",
        "op", "max rel err", "seconds", ""
    );
    for c in &checks {
        println!(
            "{:<20} {:>12.3e} {:>9.3} {:>6}",
            c.op,
            c.max_rel_err,
            c.seconds,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.op).collect();
    let total: f64 = checks.iter().map(|c| c.seconds).sum();
    println!(
        "{} ops, tolerance {:.0e}, {:.2} s",
        checks.len(),
        a.tolerance,
        total
    );
    if !failed.is_empty() {
        anyhow::bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
