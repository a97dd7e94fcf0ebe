//! The `bacl` command line: `gen`, `train`, `eval` and `report`.
//!
//! Every subcommand writes `manifest.json` into its output directory with the
//! resolved configuration, the seed, the arguments and SHA-256 checksums of
//! the files it produced. Train and eval regenerate the task from the
//! configuration and seed, so a manifest plus its `config.toml` is enough to
//! reproduce a run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::Checkpoint;
use crate::config::ExperimentConfig;
use crate::datagen::{make_task, write_examples, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{balance_report, compare_runs, BalanceReport, Metric};
use crate::params::IndicatorKind;
use crate::trainer::{evaluate, train_stage1, train_stage2, Evaluation, Mode, RunLog};

#[derive(Debug, Parser)]
#[command(name = "bacl", version, about = "Balanced classifier learning on a synthetic long-tailed task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the task and write it to disk.
    Gen(Common),
    /// Train one stage (or the end-to-end softmax baseline).
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Compare finished runs.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML file with dotted keys; defaults are used for anything unset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// baseline_ce, bce_objectness or bacl.
    #[arg(long, default_value = "bacl")]
    pub mode: String,
    #[arg(long, default_value_t = 1)]
    pub stage: u8,
    /// Stage-1 checkpoint, required for stage 2.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub indicator: Option<String>,
    #[arg(long)]
    pub no_margin: bool,
    #[arg(long)]
    pub no_weight_term: bool,
    #[arg(long)]
    pub no_fhm: bool,
}

#[derive(Debug, Args, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Output directories of earlier `train` runs.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config: Option<ExperimentConfig>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// File name to lowercase hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub mode: Mode,
    pub stage: u8,
    pub seed: u64,
    pub num_classes: usize,
    pub config: ExperimentConfig,
    pub final_eval: Option<Evaluation>,
    pub wall_time_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output directory plus the list of files written into it.
struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_with(name, |w| writeln!(w, "{text}"))
    }

    fn finish(self, mut manifest: RunManifest) -> Result<()> {
        for name in &self.written {
            manifest.artifacts.insert(name.clone(), sha256_file(&self.dir.join(name))?);
        }
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    match &c.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn manifest(sub: &str, args: &[String], c: &Common, cfg: &ExperimentConfig) -> RunManifest {
    RunManifest {
        subcommand: sub.to_string(),
        args: args.to_vec(),
        config_path: c.config.clone(),
        config: Some(cfg.clone()),
        seed: Some(c.seed),
        out_dir: c.out.clone(),
        artifacts: BTreeMap::new(),
    }
}

fn write_balance(out: &mut OutDir, report: &BalanceReport) -> Result<()> {
    out.write_json("balance.json", report)?;
    out.write_with("norms_plot.csv", |w| report.write_plot_data(w))
}

pub fn cmd_gen(c: &Common, args: &[String]) -> Result<Dataset> {
    let cfg = load_config(c)?;
    let ds = make_task(&cfg.task, c.seed)?;
    let mut out = OutDir::create(&c.out)?;
    out.write_with("config.toml", |w| w.write_all(cfg.to_toml_string().as_bytes()))?;
    out.write_with("train.txt", |w| write_examples(w, &ds.train))?;
    out.write_with("test.txt", |w| write_examples(w, &ds.test))?;
    let groups = ds.groups();
    out.write_with("groups.csv", |w| {
        writeln!(w, "class,count,group")?;
        for (k, &n) in ds.counts.iter().enumerate() {
            writeln!(w, "{k},{n},{}", groups.get(k))?;
        }
        Ok(())
    })?;
    out.finish(manifest("gen", args, c, &cfg))?;
    Ok(ds)
}

fn train_mode(a: &TrainArgs) -> Result<Mode> {
    a.mode.parse()
}

pub fn cmd_train(a: &TrainArgs, args: &[String]) -> Result<RunSummary> {
    let started = Instant::now();
    let mut cfg = load_config(&a.common)?;
    if let Some(k) = &a.indicator {
        cfg.hp.indicator_kind = k.parse::<IndicatorKind>()?;
    }
    cfg.ablation.use_margin &= !a.no_margin;
    cfg.ablation.use_weight_term &= !a.no_weight_term;
    cfg.ablation.use_fhm &= !a.no_fhm;
    cfg.validate()?;
    let mode = train_mode(a)?;
    match (mode, a.stage) {
        (_, 1) => {}
        (Mode::BaselineCe, s) => {
            return Err(Error::InvalidParam {
                field: "stage",
                value: s.to_string(),
                range: "1 for baseline_ce (it trains end to end)",
            })
        }
        (_, 2) => {}
        (_, s) => {
            return Err(Error::InvalidParam {
                field: "stage",
                value: s.to_string(),
                range: "1 or 2",
            })
        }
    }
    let stage1 = if a.stage == 2 {
        let path = a.checkpoint.as_ref().ok_or_else(|| {
            Error::Checkpoint("stage 2 needs a stage-1 checkpoint; pass --checkpoint".into())
        })?;
        let ck = Checkpoint::load(path)?;
        if ck.stage != 1 {
            return Err(Error::Checkpoint(format!(
                "{} is a stage-{} checkpoint, stage 2 needs stage 1",
                path.display(),
                ck.stage
            )));
        }
        Some(ck.model)
    } else {
        None
    };

    let ds = make_task(&cfg.task, a.common.seed)?;
    let tc = cfg.train_config(mode, a.common.seed);
    let mut out = OutDir::create(&a.common.out)?;
    out.write_with("config.toml", |w| w.write_all(cfg.to_toml_string().as_bytes()))?;

    let (model, log) = match stage1 {
        None => {
            let (model, log) = train_stage1(&ds, &tc)?;
            (model, log)
        }
        Some(m1) => {
            let s2 = train_stage2(&m1, &ds, &tc)?;
            let kind = tc.hp.indicator_kind;
            let snap = s2.indicators.snapshot();
            out.write_with("indicators.csv", |w| snap.write_per_class_csv(w))?;
            if kind.is_confusion() {
                out.write_with(&format!("{kind}.csv"), |w| snap.write_matrix_csv(w, kind))?;
            }
            if tc.components().use_fhm {
                out.write_with("feature_distribution.csv", |w| s2.distribution.write_csv(w))?;
            }
            (s2.model, s2.log)
        }
    };

    let ck = Checkpoint::new(a.stage, mode.name(), model.clone());
    let ck_text = ck.to_json()?;
    out.write_with("checkpoint.json", |w| w.write_all(ck_text.as_bytes()))?;
    out.write_with("runlog.csv", |w| log.write_csv(w))?;
    write_balance(&mut out, &balance_report(&model, &ds, None)?)?;
    let summary = RunSummary {
        label: log.label.clone(),
        mode,
        stage: a.stage,
        seed: a.common.seed,
        num_classes: ds.num_classes(),
        config: cfg.clone(),
        final_eval: log.final_eval.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    out.write_json("summary.json", &summary)?;
    let mut m = manifest("train", args, &a.common, &cfg);
    if let Some(p) = &a.checkpoint {
        m.artifacts.insert("input_checkpoint".into(), sha256_file(p)?);
    }
    out.finish(m)?;
    Ok(summary)
}

pub fn cmd_eval(a: &EvalArgs, args: &[String]) -> Result<Evaluation> {
    let cfg = load_config(&a.common)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ds = make_task(&cfg.task, a.common.seed)?;
    if ck.model.num_classes() != ds.num_classes() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} classes, task has {}",
            ck.model.num_classes(),
            ds.num_classes()
        )));
    }
    let eval = evaluate(&ck.model, &ds)?;
    let mut out = OutDir::create(&a.common.out)?;
    out.write_with("config.toml", |w| w.write_all(cfg.to_toml_string().as_bytes()))?;
    out.write_json("eval.json", &eval)?;
    write_balance(&mut out, &balance_report(&ck.model, &ds, None)?)?;
    let mut m = manifest("eval", args, &a.common, &cfg);
    m.artifacts.insert("input_checkpoint".into(), sha256_file(&a.checkpoint)?);
    out.finish(m)?;
    Ok(eval)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Loads the run log of a finished `train` directory.
pub fn load_run(dir: &Path) -> Result<(RunSummary, RunLog)> {
    let summary: RunSummary = read_json(&dir.join("summary.json"))?;
    let path = dir.join("runlog.csv");
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let log = RunLog::read_csv(&summary.label, summary.num_classes, BufReader::new(f))
        .map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })?;
    Ok((summary, log))
}

pub fn cmd_report(a: &ReportArgs, args: &[String]) -> Result<()> {
    let mut logs: Vec<RunLog> = Vec::new();
    let mut balances = Vec::new();
    for dir in &a.runs {
        let (_, mut log) = load_run(dir)?;
        // labels name columns; repeat labels get a positional suffix
        if logs.iter().any(|l| l.label == log.label) {
            log.label = format!("{}#{}", log.label, logs.len() + 1);
        }
        let bal: Option<BalanceReport> = {
            let p = dir.join("balance.json");
            if p.exists() {
                Some(read_json(&p)?)
            } else {
                None
            }
        };
        balances.push((log.label.clone(), bal));
        logs.push(log);
    }
    let table = compare_runs(&logs)?;
    let mut out = OutDir::create(&a.out)?;
    for m in Metric::ALL {
        out.write_with(&format!("compare_{}.csv", m.name()), |w| table.write_metric_csv(w, m))?;
    }
    out.write_with("compare_final.csv", |w| table.write_final_csv(w))?;
    out.write_with("balance_summary.csv", |w| {
        writeln!(w, "run,norm_cv,acc_rare,acc_common,acc_frequent,acc_overall,head_tail_gap")?;
        for (label, b) in &balances {
            match b {
                Some(b) => writeln!(
                    w,
                    "{label},{},{},{},{},{},{}",
                    b.norm_cv, b.acc_rare, b.acc_common, b.acc_frequent, b.acc_overall, b.head_tail_gap
                )?,
                None => writeln!(w, "{label},,,,,,")?,
            }
        }
        Ok(())
    })?;
    out.finish(RunManifest {
        subcommand: "report".into(),
        args: args.to_vec(),
        config_path: None,
        config: None,
        seed: None,
        out_dir: a.out.clone(),
        artifacts: BTreeMap::new(),
    })
}

/// Parses `argv` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(e.to_string()))?;
    match &cli.command {
        Command::Gen(c) => cmd_gen(c, &args).map(|_| ()),
        Command::Train(a) => cmd_train(a, &args).map(|_| ()),
        Command::Eval(a) => cmd_eval(a, &args).map(|_| ()),
        Command::Report(a) => cmd_report(a, &args),
    }
}

/// Entry point for the binary: help and version go to stdout, failures to a
/// single `error[kind]: message` line on stderr.
pub fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    if let Err(e) = Cli::try_parse_from(&argv) {
        if !e.use_stderr() {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        let first = e.to_string();
        let line = first.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
        eprintln!("error[usage]: {line}");
        return ExitCode::from(2);
    }
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
