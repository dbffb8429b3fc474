//! Command-line front end: dataset generation, two-stage training,
//! generation from a checkpoint, and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fusecore::config::Config;
use fusecore::datasynth::{emit_dataset, read_records, read_video};
use fusecore::eval::{run_eval, write_report};
use fusecore::pipeline::Pipeline;
use fusecore::reasoner::{GenerationConfig, Strategy, TaskKind};
use fusecore::training::{
    build_samples, lm_warmup, load_checkpoint, prepare_stage, stage_checkpoint_path, train_stage,
    warmup_texts, StepLog,
};

#[derive(Parser)]
#[command(
    name = "fusecore",
    version,
    about = "Train and run a small video reasoning pipeline on a synthetic micro-world corpus"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit the stage1 / stage2 / eval dataset splits and video files.
    MakeData(MakeDataArgs),
    /// Run one training stage (stage 1: alignment, stage 2: instructions).
    Train(TrainArgs),
    /// Generate text for a video from a trained checkpoint.
    Generate(GenerateArgs),
    /// Score a checkpoint on a dataset split and write a report.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Built-in configuration preset.
    #[arg(long, default_value = "toy", conflicts_with = "config")]
    preset: String,
    /// Complete TOML configuration file (overrides --preset).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::from_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => Config::preset(&self.preset)?,
        };
        if let Ok(seed) = std::env::var("FUSECORE_SEED") {
            let seed: u64 = seed
                .parse()
                .with_context(|| format!("FUSECORE_SEED {seed:?} is not an integer"))?;
            cfg.override_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct MakeDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (defaults to the config's data.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing split files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training stage to run.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    /// Dataset directory (defaults to the config's data.dir).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for checkpoints and logs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Continue an interrupted run of the same stage from a checkpoint.
    #[arg(long, conflicts_with = "init_from")]
    resume: Option<PathBuf>,
    /// Initialize stage 2 from a completed stage-1 checkpoint.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Allow stage 2 without a stage-1 checkpoint.
    #[arg(long)]
    allow_stage_skip: bool,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Video tensor file.
    #[arg(long)]
    video: PathBuf,
    /// caption | reasoning | prediction
    #[arg(long)]
    task: String,
    /// greedy | nucleus | beam
    #[arg(long, default_value = "greedy")]
    strategy: String,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    #[arg(long, default_value_t = 64)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split name (stage1 | stage2 | eval).
    #[arg(long, default_value = "eval")]
    split: String,
    /// Dataset directory (defaults to the config's data.dir).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "greedy")]
    strategy: String,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file to write.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing report.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::MakeData(args) => cmd_make_data(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Eval(args) => cmd_eval(args),
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    Ok(())
}

fn cmd_make_data(args: MakeDataArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let mut data_cfg = cfg.data.dataset_config();
    if let Some(out) = args.out {
        data_cfg.out_dir = out;
    }
    for split in ["stage1", "stage2", "eval"] {
        refuse_overwrite(&data_cfg.out_dir.join(format!("{split}.jsonl")), args.force)?;
    }
    emit_dataset(&data_cfg)?;
    for (name, range) in [
        ("stage1", &data_cfg.stage1),
        ("stage2", &data_cfg.stage2),
        ("eval", &data_cfg.eval),
    ] {
        println!(
            "wrote {} ({} records, seeds {}..{})",
            data_cfg.out_dir.join(format!("{name}.jsonl")).display(),
            range.count,
            range.start,
            range.end()
        );
    }
    Ok(())
}

fn write_log(path: &Path, logs: &[StepLog], append: bool) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)?;
    for l in logs {
        writeln!(file, "{}", serde_json::to_string(l)?)?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let data_dir = args.data.unwrap_or_else(|| PathBuf::from(&cfg.data.dir));
    let stage = args.stage;
    let stage_cfg = match stage {
        1 => cfg.train.stage1.clone(),
        _ => cfg.train.stage2.clone(),
    };
    fs::create_dir_all(&args.out)?;
    let log_path = args.out.join(format!("stage{stage}_log.jsonl"));
    let resuming = args.resume.is_some();
    if !resuming {
        refuse_overwrite(&log_path, args.force)?;
        refuse_overwrite(&stage_checkpoint_path(&args.out, stage, None), args.force)?;
    }

    let (mut pipeline, mut state) = match (&args.resume, &args.init_from) {
        (Some(path), _) => {
            let (pipeline, state) = load_checkpoint(path)
                .with_context(|| format!("resuming from {}", path.display()))?;
            if state.stage != stage {
                bail!(
                    "checkpoint {} is a stage-{} state, not stage {stage}",
                    path.display(),
                    state.stage
                );
            }
            (pipeline, state)
        }
        (None, Some(path)) => {
            if stage != 2 {
                bail!("--init-from is for stage 2; stage 1 starts fresh");
            }
            let (mut pipeline, _) = load_checkpoint(path)
                .with_context(|| format!("initializing from {}", path.display()))?;
            let state = prepare_stage(
                &mut pipeline,
                2,
                &stage_cfg,
                Some((cfg.lora.rank, cfg.lora.alpha)),
                args.allow_stage_skip,
            )?;
            (pipeline, state)
        }
        (None, None) => {
            let mut pipeline = Pipeline::new(cfg.model.clone(), cfg.seed)?;
            if stage == 2 && !args.allow_stage_skip {
                bail!("stage 2 needs --init-from <stage-1 checkpoint> (or --allow-stage-skip)");
            }
            if cfg.warmup.opt.steps > 0 {
                let texts = warmup_texts(&pipeline.vocab, &cfg.warmup.text_seeds, cfg.data.video_steps);
                println!(
                    "language-model warmup: {} texts, {} steps",
                    texts.len(),
                    cfg.warmup.opt.steps
                );
                let logs = lm_warmup(&mut pipeline, &texts, &cfg.warmup.opt)?;
                pipeline.lm_warmed = true;
                write_log(&args.out.join("warmup_log.jsonl"), &logs, false)?;
                if let Some(last) = logs.last() {
                    println!("warmup final loss {:.4}", last.loss);
                }
            }
            let lora = (stage == 2).then_some((cfg.lora.rank, cfg.lora.alpha));
            let state = prepare_stage(&mut pipeline, stage, &stage_cfg, lora, args.allow_stage_skip)?;
            (pipeline, state)
        }
    };

    let (_, records) = read_records(&data_dir.join(format!("stage{stage}.jsonl")))?;
    println!(
        "stage {stage}: {} samples, {} steps, batch {}",
        records.len(),
        stage_cfg.steps,
        stage_cfg.batch_size
    );
    let samples = build_samples(&pipeline, &records, &data_dir, stage)?;
    let logs = train_stage(&mut pipeline, &mut state, &samples, &stage_cfg, Some(&args.out))?;
    write_log(&log_path, &logs, resuming)?;
    if let Some(last) = logs.last() {
        println!("stage {stage} final loss {:.4}", last.loss);
    }
    println!(
        "checkpoint written to {}",
        stage_checkpoint_path(&args.out, stage, None).display()
    );
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let (pipeline, _) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let video = read_video(&args.video)?;
    let plan = pipeline.clip_plan(&video)?;
    let masks = pipeline.masks_for_video(&video, &plan);
    let task = TaskKind::parse(&args.task)?;
    let gen_cfg = GenerationConfig {
        strategy: Strategy::parse(&args.strategy)?,
        top_p: args.top_p,
        temperature: args.temperature,
        beam_width: args.beam_width,
        max_new_tokens: args.max_new_tokens,
        seed: args.seed,
    };
    let text = pipeline.generate_text(&video, &masks, task, &gen_cfg)?;
    println!("{text}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    refuse_overwrite(&args.out, args.force)?;
    let cfg = args.config.load()?;
    let data_dir = args.data.unwrap_or_else(|| PathBuf::from(&cfg.data.dir));
    let (pipeline, _) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let gen_cfg = GenerationConfig {
        strategy: Strategy::parse(&args.strategy)?,
        top_p: args.top_p,
        temperature: args.temperature,
        max_new_tokens: 64,
        seed: args.seed,
        ..Default::default()
    };
    let report = run_eval(
        &pipeline,
        &data_dir,
        &args.split,
        &gen_cfg,
        &args.checkpoint.display().to_string(),
    )?;
    write_report(&args.out, &report)?;
    let s = &report.summary;
    println!("samples   {}", s.samples);
    println!("accuracy  {:.4}", s.accuracy);
    println!("bleu      {:.4}", s.bleu);
    println!("rouge_l   {:.4}", s.rouge_l);
    println!("cider     {:.4}", s.cider);
    println!("report written to {}", args.out.display());
    Ok(())
}
