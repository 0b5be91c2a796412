//! Command-line front end: dataset synthesis, adapter training, video
//! editing, oracle evaluation, and the invariant selftest.
//!
//! Exit codes: 0 success, 1 invariant/threshold failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vidflow::config::RunConfig;
use vidflow::data::{load_dataset, TrainingPair};
use vidflow::error::Error;
use vidflow::flow::{train, write_loss_csv};
use vidflow::metrics::{evaluate, EvalPair, Report};
use vidflow::model::{load_model, EditModel};
use vidflow::sampler::edit_video;
use vidflow::scene::{gen_dataset, Split, TaskKind};
use vidflow::selftest::run_selftest;
use vidflow::video::{read_vvf, write_ppm, write_vvf};

#[derive(Parser)]
#[command(
    name = "vidflow",
    version,
    about = "Desk-scale video editing via image-trained spatial adapters"
)]
struct Cli {
    /// JSON run configuration; flags override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-video stages (training is single-threaded).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired dataset with exact oracle targets.
    Synth(SynthArgs),
    /// Train the editing adapter (or the direct-tuning baseline).
    Train(TrainArgs),
    /// Edit a VVF video with a trained checkpoint.
    Edit(EditArgs),
    /// Score a checkpoint against an oracle evaluation set.
    Eval(EvalArgs),
    /// Run every bit-level invariant on micro models.
    Selftest,
}

#[derive(Args)]
struct SynthArgs {
    /// Task name(s), comma separated.
    #[arg(long)]
    task: Option<String>,
    /// Pairs per task.
    #[arg(long)]
    n: Option<usize>,
    /// Frames per clip (1 for training sets).
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    canvas: Option<usize>,
    /// Seed namespace: train and eval draws are disjoint.
    #[arg(long, value_parser = parse_split, default_value = "train")]
    split: Split,
    /// Output directory (default: paths.data_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (default: paths.data_dir).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Output directory for checkpoints and the loss curve
    /// (default: paths.run_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train the direct-tuning baseline instead of the adapter.
    #[arg(long)]
    direct_tuning: bool,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Also write one PPM image per output frame into this directory.
    #[arg(long)]
    ppm: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation dataset directory with oracle targets
    /// (default: paths.data_dir).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for report.csv / report.json (default: paths.run_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also train and score an ablation baseline ("direct-tuning").
    #[arg(long)]
    compare: Option<String>,
    /// Training dataset for the --compare baseline.
    #[arg(long)]
    train_data: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "eval" => Ok(Split::Eval),
        other => Err(format!("unknown split '{other}', expected train or eval")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
        cfg.sample.seed = seed;
        cfg.data.seed = seed;
    }
    match run(cli, cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(e, Error::Config(_) | Error::Invalid { op: "task", .. });
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli, cfg: RunConfig) -> vidflow::Result<ExitCode> {
    match cli.command {
        Command::Synth(args) => synth(args, cfg),
        Command::Train(args) => do_train(args, cfg),
        Command::Edit(args) => edit(args, cfg),
        Command::Eval(args) => eval(args, cfg, cli.threads),
        Command::Selftest => Ok(selftest()),
    }
}

fn synth(args: SynthArgs, mut cfg: RunConfig) -> vidflow::Result<ExitCode> {
    if cfg.data.tasks.is_empty() {
        cfg.data = vidflow::config::DataSection::with_defaults_for("channel-permute");
    }
    if let Some(t) = &args.task {
        cfg.data.tasks = t.split(',').map(|s| s.trim().to_string()).collect();
    }
    let tasks = cfg.data.task_kinds()?;
    let n = args.n.unwrap_or(cfg.data.n_pairs);
    let frames = args.frames.unwrap_or(match args.split {
        Split::Train => 1,
        Split::Eval => cfg.data.eval_frames,
    });
    let canvas = args.canvas.unwrap_or(cfg.data.canvas);
    let out = args.out.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let manifest = gen_dataset(&out, &tasks, n, cfg.data.seed, frames, canvas, args.split)?;
    println!(
        "wrote {} pairs ({} files) for task(s) {} into {}",
        manifest.pairs.len(),
        2 * manifest.pairs.len(),
        manifest.task,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn do_train(args: TrainArgs, mut cfg: RunConfig) -> vidflow::Result<ExitCode> {
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    let data_dir = args.data.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let out_dir = args.out.unwrap_or_else(|| cfg.paths.run_dir.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let (pairs, manifest) = load_dataset(&data_dir)?;
    println!(
        "training on {} pairs ({}) for {} epochs",
        pairs.len(),
        manifest.task,
        cfg.train.epochs
    );
    let mcfg = cfg.model.model_config();
    let mut model = if args.direct_tuning {
        EditModel::<f32>::new_direct_tuned(mcfg, cfg.model.seed)?
    } else {
        EditModel::<f32>::new_adapted(mcfg, cfg.train.rank, cfg.model.seed)?
    };
    let run = train(&mut model, &pairs, &cfg.train, Some(&out_dir))?;
    write_loss_csv(&out_dir.join("loss.csv"), &run.rows)?;
    model.save(&out_dir.join("model_final.vfck"))?;
    let last = run.rows.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "done: {} steps, final loss {last:.5}; wrote {}",
        run.steps,
        out_dir.join("model_final.vfck").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn edit(args: EditArgs, mut cfg: RunConfig) -> vidflow::Result<ExitCode> {
    if let Some(a) = args.alpha {
        cfg.sample.alpha = a;
    }
    if let Some(s) = args.steps {
        cfg.sample.steps = s;
    }
    let task = TaskKind::from_name(&args.task)?;
    let model = load_model(cfg.model.model_config(), &args.checkpoint)?;
    let source = read_vvf(&args.input)?;
    let edited = edit_video(&model, &source, task.id(), &cfg.sample)?;
    write_vvf(&args.output, &edited)?;
    println!("edited {} -> {}", args.input.display(), args.output.display());
    if let Some(dir) = args.ppm {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for f in 0..edited.frames {
            write_ppm(&dir.join(format!("frame_{f:03}.ppm")), &edited, f)?;
        }
        println!("wrote {} PPM frames into {}", edited.frames, dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_eval_pairs(dir: &std::path::Path) -> vidflow::Result<Vec<EvalPair>> {
    let (pairs, manifest) = load_dataset(dir)?;
    Ok(pairs
        .into_iter()
        .zip(manifest.pairs)
        .map(|(p, m)| EvalPair {
            id: m.id,
            task_id: p.task_id,
            source: p.source,
            target: p.target,
        })
        .collect())
}

fn check_thresholds(report: &Report, cfg: &RunConfig) -> bool {
    let mut ok = true;
    for row in &report.rows {
        if let Some(min) = cfg.eval.min_psnr_db {
            if row.psnr_mean < min {
                eprintln!(
                    "threshold violated: task {} psnr_mean {:.2} dB < {min}",
                    row.task_id, row.psnr_mean
                );
                ok = false;
            }
        }
        if let (Some(max), Some(fff)) =
            (cfg.eval.max_frozen_frame_fraction, row.frozen_frame_fraction)
        {
            if fff > max {
                eprintln!(
                    "threshold violated: task {} frozen_frame_fraction {fff:.3} > {max}",
                    row.task_id
                );
                ok = false;
            }
        }
    }
    ok
}

fn eval(args: EvalArgs, cfg: RunConfig, threads: usize) -> vidflow::Result<ExitCode> {
    let data_dir = args.data.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let out_dir = args.out.unwrap_or_else(|| cfg.paths.run_dir.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let pairs = load_eval_pairs(&data_dir)?;
    let model = load_model(cfg.model.model_config(), &args.checkpoint)?;
    let report = evaluate(&model, &pairs, &cfg.sample, threads)?;
    report.write(&out_dir.join("report.csv"), &out_dir.join("report.json"))?;
    for row in &report.rows {
        println!(
            "task {}: n {} psnr_mean {:.2} dB psnr_min {:.2} dB me_ratio {} fff {}",
            row.task_id,
            row.n_videos,
            row.psnr_mean,
            row.psnr_min,
            row.motion_energy_ratio
                .map(|v| format!("{v:.3}"))
                .unwrap_or_default(),
            row.frozen_frame_fraction
                .map(|v| format!("{v:.3}"))
                .unwrap_or_default(),
        );
    }
    let mut ok = check_thresholds(&report, &cfg);

    if let Some(kind) = args.compare {
        if kind != "direct-tuning" {
            return Err(Error::Config(format!(
                "unknown --compare baseline '{kind}' (expected direct-tuning)"
            )));
        }
        let train_dir = args
            .train_data
            .ok_or_else(|| Error::Config("--compare requires --train-data".into()))?;
        let (train_pairs, _) = load_dataset(&train_dir)?;
        let train_pairs: Vec<TrainingPair> = train_pairs;
        println!("training direct-tuning baseline on {} pairs", train_pairs.len());
        let mut baseline =
            EditModel::<f32>::new_direct_tuned(cfg.model.model_config(), cfg.model.seed)?;
        train(&mut baseline, &train_pairs, &cfg.train, None)?;
        let base_report = evaluate(&baseline, &pairs, &cfg.sample, threads)?;
        base_report.write(
            &out_dir.join("report_direct_tuning.csv"),
            &out_dir.join("report_direct_tuning.json"),
        )?;
        for row in &base_report.rows {
            println!(
                "direct-tuning task {}: n {} psnr_mean {:.2} dB me_ratio {} fff {}",
                row.task_id,
                row.n_videos,
                row.psnr_mean,
                row.motion_energy_ratio
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_default(),
                row.frozen_frame_fraction
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_default(),
            );
        }
        ok &= check_thresholds(&base_report, &cfg);
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn selftest() -> ExitCode {
    let report = run_selftest(None);
    let mut ok = true;
    for c in &report.checks {
        println!(
            "[{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        ok &= c.passed;
    }
    if ok {
        println!("selftest: all {} checks passed", report.checks.len());
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
