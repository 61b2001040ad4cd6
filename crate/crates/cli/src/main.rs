//! `confalign` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 missing input file,
//! 3 config or usage error, 4 training diverged, 5 verification failed.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use confalign::alignment::{AlignmentModel, GradCheckFixture};
use confalign::checkpoint::{load_checkpoint, save_checkpoint};
use confalign::confidence::{build_scorer, encode_caption, read_report, score_all, write_report, ConfidenceRecord};
use confalign::config::RunConfig;
use confalign::datapipe::{
    caption_provider_registry, run_pipeline, shot_provider_registry, write_manifest, CaptionMetadata, FrameSequence,
    Source,
};
use confalign::dataset::{load_split, open, read_corpus, split_paths, Split};
use confalign::evalkit::{read_prompt_file, EvalResult};
use confalign::runs;
use confalign::synth::generate;
use confalign::Error;

#[derive(Parser)]
#[command(name = "confalign", version, about = "Confidence-weighted video-text alignment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory (overrides paths.data_dir).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dotted config override, e.g. `--set optim.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Curate clips from raw videos listed in a sources file.
    Prep {
        #[command(flatten)]
        common: Common,
        /// JSON array of {source_id, title, surgery_type, video}; video paths
        /// are relative to the sources file.
        #[arg(long)]
        sources: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Score caption confidence for a split.
    Confidence {
        #[command(flatten)]
        common: Common,
        /// Clean caption corpus to fit the scorer on; defaults to the split's
        /// own captions.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Generate a synthetic phase-labelled dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train adapters, pooler, heads and temperature.
    Train {
        #[command(flatten)]
        common: Common,
        /// Clean caption corpus for the confidence scorer; defaults to
        /// `<data>/corpus.txt` when present.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Zero-shot phase recognition against class prompts.
    EvalZeroshot {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        /// Prompt file; defaults to `<data>/prompts.json`.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Linear probe on frozen pooled features.
    EvalLinear {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Finite-difference check of the full training gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        batch: usize,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Run directory holding config.json and the checkpoint.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Evaluate the freshly initialized model instead of a checkpoint.
    #[arg(long, conflicts_with = "run")]
    untrained: bool,
    #[arg(long, default_value = "test")]
    split: String,
}

enum Failure {
    Lib(Error),
    Usage(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 3,
            Failure::Verification(_) => 5,
            Failure::Lib(e) => match e {
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                Error::Config(_) | Error::UnknownStrategy { .. } => 3,
                Error::Divergence { .. } => 4,
                _ => 1,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Verification(_) => "verification",
            Failure::Lib(Error::Io(io)) if io.kind() == std::io::ErrorKind::NotFound => "missing-input",
            Failure::Lib(e) => e.kind(),
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Verification(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return fail(Failure::Usage(e.kind().to_string()));
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    let code = f.code();
    eprintln!("{}", json!({"error": f.kind(), "message": f.message(), "exit_code": code}));
    ExitCode::from(code)
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Prep { common, sources, split } => cmd_prep(&common, &sources, &split),
        Command::Confidence { common, corpus, split } => cmd_confidence(&common, corpus.as_deref(), &split),
        Command::Synth { common } => cmd_synth(&common),
        Command::Train { common, corpus } => cmd_train(&common, corpus.as_deref()),
        Command::EvalZeroshot { common, eval, prompts } => cmd_eval_zeroshot(&common, &eval, prompts.as_deref()),
        Command::EvalLinear { common, eval } => cmd_eval_linear(&common, &eval),
        Command::Gradcheck {
            common,
            batch,
            frames,
            width,
            step,
            tolerance,
        } => cmd_gradcheck(&common, batch, frames, width, step, tolerance),
    }
}

fn load_config(common: &Common, base: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    let mut overrides = Vec::new();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("override `{kv}` is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(d) = &common.data {
        overrides.push(("paths.data_dir".into(), json!(d.to_string_lossy()).to_string()));
    }
    let path = common.config.as_deref().or(base);
    Ok(RunConfig::load(path, &overrides)?)
}

fn data_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.paths.data_dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceEntry {
    source_id: String,
    title: String,
    surgery_type: String,
    video: PathBuf,
}

fn cmd_prep(common: &Common, sources_path: &Path, split: &str) -> CmdResult {
    let cfg = load_config(common, None)?;
    let out = common.out.clone().unwrap_or_else(|| data_dir(&cfg));
    let entries: Vec<SourceEntry> = serde_json::from_reader(BufReader::new(open(sources_path)?))?;
    let base = sources_path.parent().unwrap_or(Path::new("."));
    let sources = entries
        .into_iter()
        .map(|e| {
            Ok(Source {
                source_id: e.source_id,
                metadata: CaptionMetadata {
                    title: e.title,
                    surgery_type: e.surgery_type,
                },
                video: FrameSequence::load(&base.join(e.video))?,
            })
        })
        .collect::<confalign::Result<Vec<_>>>()?;
    let shots = shot_provider_registry().build(&cfg.pipeline.shot_provider, &())?;
    let captions = caption_provider_registry().build(&cfg.pipeline.caption_provider, &())?;
    let output = run_pipeline(&sources, shots.as_ref(), captions.as_ref(), &cfg.pipeline)?;
    std::fs::create_dir_all(&out)?;
    let (limf, manifest, _) = split_paths(&out, split);
    let frames: Vec<_> = output.thumbnails.into_iter().flatten().collect();
    let fps = sources.first().map_or(1.0, |s| s.video.fps);
    if frames.is_empty() {
        return Err(Error::Domain("no clips survived curation".into()).into());
    }
    FrameSequence::new(fps, frames)?.save(&limf)?;
    let mut w = BufWriter::new(std::fs::File::create(&manifest)?);
    write_manifest(&mut w, &output.records)?;
    w.flush()?;
    write_json(&out.join(format!("{split}.stats.json")), &output.stats)?;
    println!("{}", serde_json::to_string(&output.stats)?);
    Ok(())
}

fn fit_corpus(path: Option<&Path>, fallback: Option<PathBuf>) -> std::result::Result<Option<Vec<String>>, Failure> {
    match path {
        Some(p) => Ok(Some(read_corpus(p)?)),
        None => match fallback.filter(|p| p.exists()) {
            Some(p) => Ok(Some(read_corpus(&p)?)),
            None => Ok(None),
        },
    }
}

fn cmd_confidence(common: &Common, corpus: Option<&Path>, split: &str) -> CmdResult {
    let cfg = load_config(common, None)?;
    let dir = data_dir(&cfg);
    let (_, manifest_path, _) = split_paths(&dir, split);
    let manifest = confalign::datapipe::read_manifest(BufReader::new(open(&manifest_path)?))?;
    let vocab = cfg.model.vocab;
    let captions = manifest
        .iter()
        .map(|r| encode_caption(&r.caption, vocab))
        .collect::<confalign::Result<Vec<_>>>()?;
    let fit_on = match fit_corpus(corpus, None)? {
        Some(lines) => lines
            .iter()
            .map(|l| encode_caption(l, vocab))
            .collect::<confalign::Result<Vec<_>>>()?,
        None => captions.clone(),
    };
    let scorer = build_scorer(&cfg.confidence.scorer, vocab, &fit_on)?;
    let scores = score_all(&captions, scorer.as_ref())?;
    let records: Vec<ConfidenceRecord> = manifest
        .iter()
        .zip(&captions)
        .zip(&scores)
        .map(|((r, t), &c)| ConfidenceRecord {
            clip_id: r.clip_id.clone(),
            token_count: t.body().len(),
            confidence: c,
        })
        .collect();
    let out = common.out.clone().unwrap_or(dir);
    std::fs::create_dir_all(&out)?;
    let path = out.join(format!("{split}.confidence.jsonl"));
    let mut w = BufWriter::new(std::fs::File::create(&path)?);
    write_report(&mut w, &records)?;
    w.flush()?;
    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    println!("{}", json!({"records": records.len(), "mean_confidence": mean, "report": path}));
    Ok(())
}

fn cmd_synth(common: &Common) -> CmdResult {
    let cfg = load_config(common, None)?;
    let out = common.out.clone().unwrap_or_else(|| data_dir(&cfg));
    let ds = generate(&cfg.synth, cfg.temporal_window, cfg.pipeline.thumb_size, cfg.seed)?;
    ds.write(&out)?;
    let corrupted = ds.train.labels.iter().filter(|l| l.corrupted).count();
    println!(
        "{}",
        json!({"dir": out, "train": ds.train.labels.len(), "test": ds.test.labels.len(), "corrupted": corrupted})
    );
    Ok(())
}

/// Fills missing manifest confidences from `<split>.confidence.jsonl` when
/// that report exists next to the split.
fn attach_report(split: &mut Split, dir: &Path, name: &str) -> CmdResult {
    let path = dir.join(format!("{name}.confidence.jsonl"));
    if !path.exists() {
        return Ok(());
    }
    let report: HashMap<String, f64> = read_report(BufReader::new(open(&path)?))?
        .into_iter()
        .map(|r| (r.clip_id, r.confidence))
        .collect();
    for rec in &mut split.manifest {
        if rec.confidence.is_none() {
            rec.confidence = report.get(&rec.clip_id).copied();
        }
    }
    log::info!("using confidences from {}", path.display());
    Ok(())
}

fn cmd_train(common: &Common, corpus: Option<&Path>) -> CmdResult {
    let cfg = load_config(common, None)?;
    let run_dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.out_dir));
    let dir = data_dir(&cfg);
    let mut split = load_split(&dir, "train", cfg.temporal_window)?;
    attach_report(&mut split, &dir, "train")?;
    let corpus = fit_corpus(corpus, Some(dir.join("corpus.txt")))?;
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join("config.json"), cfg.to_json() + "\n")?;

    let mut loss_log = BufWriter::new(std::fs::File::create(run_dir.join("loss.csv"))?);
    writeln!(loss_log, "step,epoch,loss,tau,lr")?;
    let mut io_err = None;
    let started = Instant::now();
    let result = runs::train_on_split(&cfg, &split, corpus.as_deref(), &mut |r| {
        if let Err(e) = writeln!(loss_log, "{},{},{:e},{:e},{:e}", r.step, r.epoch, r.loss, r.tau, r.lr) {
            io_err.get_or_insert(e);
        }
    });
    loss_log.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let (model, report) = result?;
    let mut epochs = String::from("epoch,mean_loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        epochs.push_str(&format!("{i},{l:e}\n"));
    }
    std::fs::write(run_dir.join("epochs.csv"), epochs)?;
    save_checkpoint(&run_dir, &model)?;
    let summary = json!({
        "steps": report.steps.len(),
        "epoch_losses": report.epoch_losses,
        "final_loss": report.steps.last().map(|s| s.loss),
        "tau": model.tau(),
        "seconds": started.elapsed().as_secs_f64(),
    });
    write_json(&run_dir.join("summary.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

/// Model and config for evaluation: a trained run, or a fresh model.
fn eval_model(common: &Common, eval: &EvalArgs) -> std::result::Result<(RunConfig, AlignmentModel, PathBuf), Failure> {
    if eval.untrained {
        let cfg = load_config(common, None)?;
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.out_dir));
        let model = runs::fresh_model(&cfg)?;
        return Ok((cfg, model, out));
    }
    let run = match &eval.run {
        Some(r) => r.clone(),
        None => PathBuf::from(&load_config(common, None)?.paths.out_dir),
    };
    let snapshot = run.join("config.json");
    if !snapshot.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: run directory has no config.json", run.display()),
        ))
        .into());
    }
    let cfg = load_config(common, Some(&snapshot))?;
    let mut model = runs::fresh_model(&cfg)?;
    load_checkpoint(&run, &mut model)?;
    let out = common.out.clone().unwrap_or(run);
    Ok((cfg, model, out))
}

fn report(out: &Path, file: &str, result: &EvalResult) -> CmdResult {
    write_json(&out.join(file), result)?;
    println!("{}", serde_json::to_string(result)?);
    Ok(())
}

fn cmd_eval_zeroshot(common: &Common, eval: &EvalArgs, prompts: Option<&Path>) -> CmdResult {
    let (cfg, model, out) = eval_model(common, eval)?;
    let dir = data_dir(&cfg);
    let prompt_path = prompts.map_or_else(|| dir.join("prompts.json"), Path::to_path_buf);
    let classes = read_prompt_file(&std::fs::read_to_string(&prompt_path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", prompt_path.display()))
    })?)?;
    let split = load_split(&dir, &eval.split, cfg.temporal_window)?;
    let result = runs::zero_shot(&model, &split, &classes, cfg.model.vocab)?;
    report(&out, "eval-zeroshot.json", &result)
}

fn cmd_eval_linear(common: &Common, eval: &EvalArgs) -> CmdResult {
    let (cfg, model, out) = eval_model(common, eval)?;
    let dir = data_dir(&cfg);
    let train = load_split(&dir, "train", cfg.temporal_window)?;
    let test = load_split(&dir, &eval.split, cfg.temporal_window)?;
    let result = runs::linear_probe(&cfg, &model, &train, &test)?;
    report(&out, "eval-linear.json", &result)
}

fn cmd_gradcheck(common: &Common, batch: usize, frames: usize, width: usize, step: f64, tolerance: f64) -> CmdResult {
    let cfg = load_config(common, None)?;
    let started = Instant::now();
    let mut fixture = GradCheckFixture::new(batch, frames, width, cfg.seed)?;
    let r = fixture.run(step)?;
    let summary = json!({
        "max_rel_error": r.max_rel_error,
        "worst": r.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")),
        "coordinates": r.coordinates,
        "loss": r.loss,
        "tolerance": tolerance,
        "passed": r.max_rel_error < tolerance,
        "seconds": started.elapsed().as_secs_f64(),
    });
    if let Some(out) = &common.out {
        write_json(&out.join("gradcheck.json"), &summary)?;
    }
    println!("{summary}");
    if r.max_rel_error < tolerance {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "max relative error {:e} exceeds {tolerance:e}",
            r.max_rel_error
        )))
    }
}
