//! `les` — train, evaluate and run molecular dynamics with latent-charge
//! machine-learning potentials, and analyze the resulting trajectories.
//!
//! Exit codes: 0 on success, 1 for user errors (bad input, missing files,
//! invalid configuration), 2 for internal failures.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{load_config, RunConfig};
use les_core::atoms::{parse_extxyz, Cell, Configuration};
use les_core::ewald::{KSpace, SumMode};
use les_core::md::{run_md, MdProtocol};
use les_core::model::{load_checkpoint, save_checkpoint, Evaluator, ModelParams};
use les_core::train::{evaluate, train, ModelSpec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "les",
    version,
    about = "Latent-charge machine-learning potentials: training, MD and analysis"
)]
struct Cli {
    /// Increase log verbosity on stderr (-v: info, -vv: debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a labeled dataset and write a checkpoint.
    Train(CommonArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Run molecular dynamics driven by a checkpoint.
    Md(MdArgs),
    /// Compute estimators over a trajectory.
    #[command(subcommand)]
    Analyze(AnalyzeKind),
    /// Describe the reciprocal-space summation for a given cell.
    Kinfo(KinfoArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Configuration overrides, e.g. train.epochs=100 output.dir=run2
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate (default: <output.dir>/checkpoint.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset to evaluate on (default: data.test from the configuration).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct MdArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint that provides the potential
    /// (default: <output.dir>/checkpoint.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Initial configuration (default: data.init from the configuration).
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeKind {
    /// Radial distribution function of analysis.pair.
    Rdf(AnalyzeArgs),
    /// Mass density profile along analysis.axis.
    Density(AnalyzeArgs),
    /// Mean water-dipole orientation profile along analysis.axis.
    Orientation(AnalyzeArgs),
    /// k-resolved correlation of molecular dipoles along analysis.axis.
    Dipolecorr(AnalyzeArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trajectory to analyze (default: data.trajectory, falling back to
    /// <output.dir>/trajectory.extxyz).
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct KinfoArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cubic cell length (Å); otherwise the cell of data.init is used.
    #[arg(long)]
    length: Option<f64>,
}

/// User-facing failure with the exit code it maps to.
struct Failure {
    message: String,
    code: u8,
}

impl Failure {
    fn user(message: impl Into<String>) -> Failure {
        Failure { message: message.into(), code: 1 }
    }
}

impl From<les_core::Error> for Failure {
    fn from(e: les_core::Error) -> Failure {
        Failure { message: e.to_string(), code: if e.is_user_error() { 1 } else { 2 } }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Failure {
        Failure::user(message)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::user(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Md(args) => cmd_md(args),
        Command::Analyze(kind) => cmd_analyze(kind),
        Command::Kinfo(args) => cmd_kinfo(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_dataset(path: &Path) -> Result<Vec<Configuration>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::user(format!("cannot read {}: {e}", path.display())))?;
    let configs = parse_extxyz(&text)
        .map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
    if configs.is_empty() {
        return Err(Failure::user(format!("{}: no frames", path.display())));
    }
    Ok(configs)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(&cfg.output.dir)?;
    Ok(cfg.output.dir.clone())
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| cfg.output.dir.join("checkpoint.json"))
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    if !path.exists() {
        return Err(Failure::user(format!("checkpoint not found: {}", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

fn write_text(path: &Path, content: &str) -> Result<(), Failure> {
    std::fs::write(path, content)
        .map_err(|e| Failure::user(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(args: CommonArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let descriptor = cfg
        .descriptor
        .clone()
        .ok_or_else(|| Failure::user("train requires a [descriptor] section"))?;
    let train_path = cfg
        .data
        .train
        .clone()
        .ok_or_else(|| Failure::user("train requires data.train"))?;
    let dataset = read_dataset(&train_path)?;
    println!("dataset: {} configurations from {}", dataset.len(), train_path.display());

    let spec = ModelSpec {
        descriptor,
        lr: cfg.lr.clone(),
        sr_hidden: cfg.heads.sr_hidden.clone(),
        lr_hidden: cfg.heads.lr_hidden.clone(),
    };
    let (params, metrics) = train(&dataset, &spec, cfg.seed, &cfg.train)?;

    let out = output_dir(&cfg)?;
    let ckpt = out.join("checkpoint.json");
    save_checkpoint(&params, &ckpt)?;
    println!("wrote {}", ckpt.display());

    let metrics_json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| Failure { message: e.to_string(), code: 2 })?;
    write_text(&out.join("metrics.json"), &metrics_json)?;
    write_text(&out.join("metrics.txt"), &metrics.to_table())?;

    println!(
        "best epoch {} (validation loss {:.6e})",
        metrics.best_epoch, metrics.best_val_loss
    );
    println!("train-set metrics:");
    print!("{}", metrics.train.to_text());
    println!("validation-set metrics:");
    print!("{}", metrics.val.to_text());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common.config, &args.common.overrides)?;
    let params = load_model(&checkpoint_path(&cfg, args.checkpoint))?;
    let data_path = args
        .data
        .or_else(|| cfg.data.test.clone())
        .ok_or_else(|| Failure::user("eval requires data.test or --data"))?;
    let dataset = read_dataset(&data_path)?;
    let metrics = evaluate(&params, &dataset)?;

    let out = output_dir(&cfg)?;
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| Failure { message: e.to_string(), code: 2 })?;
    write_text(&out.join("eval.json"), &json)?;
    write_text(&out.join("eval.txt"), &metrics.to_text())?;
    print!("{}", metrics.to_text());
    Ok(())
}

// ---------------------------------------------------------------------------
// md

fn cmd_md(args: MdArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common.config, &args.common.overrides)?;
    let protocol: MdProtocol = cfg
        .md
        .clone()
        .ok_or_else(|| Failure::user("md requires an [md] section"))?;
    let params = load_model(&checkpoint_path(&cfg, args.checkpoint))?;
    let init_path = args
        .init
        .or_else(|| cfg.data.init.clone())
        .ok_or_else(|| Failure::user("md requires data.init or --init"))?;
    let init = read_dataset(&init_path)?;
    if init.len() != 1 {
        return Err(Failure::user(format!(
            "{}: expected a single initial configuration, found {} frames",
            init_path.display(),
            init.len()
        )));
    }

    let mut potential = Evaluator::new(params)?;
    let (trajectory, state) = run_md(&init[0], &mut potential, &protocol)?;

    let out = output_dir(&cfg)?;
    write_text(&out.join("trajectory.extxyz"), &trajectory.to_extxyz())?;

    let frames = &trajectory.frames;
    let half = &frames[frames.len() / 2..];
    let mean_t: f64 = half.iter().map(|f| f.temperature).sum::<f64>() / half.len() as f64;
    println!(
        "finished {} steps ({} fs); {} frames",
        state.step,
        state.time,
        frames.len()
    );
    println!("mean temperature over second half: {mean_t:.2} K");
    if let (Some(first), Some(last)) = (frames.first(), frames.last()) {
        if let (Some(c0), Some(c1)) = (first.conserved, last.conserved) {
            println!("conserved-quantity change: {:.3e} eV", c1 - c0);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

fn trajectory_frames(cfg: &RunConfig, explicit: Option<PathBuf>) -> Result<Vec<Configuration>, Failure> {
    let path = explicit
        .or_else(|| cfg.data.trajectory.clone())
        .unwrap_or_else(|| cfg.output.dir.join("trajectory.extxyz"));
    read_dataset(&path)
}

fn cmd_analyze(kind: AnalyzeKind) -> Result<(), Failure> {
    let (args, name): (&AnalyzeArgs, &str) = match &kind {
        AnalyzeKind::Rdf(a) => (a, "rdf"),
        AnalyzeKind::Density(a) => (a, "density"),
        AnalyzeKind::Orientation(a) => (a, "orientation"),
        AnalyzeKind::Dipolecorr(a) => (a, "dipolecorr"),
    };
    let cfg = load_config(&args.common.config, &args.common.overrides)?;
    let frames = trajectory_frames(&cfg, args.trajectory.clone())?;
    let a = &cfg.analysis;
    let table = match kind {
        AnalyzeKind::Rdf(_) => {
            les_core::analysis::compute_rdf(&frames, &a.pair[0], &a.pair[1], a.r_max, a.n_bins)?
                .to_table()
        }
        AnalyzeKind::Density(_) => {
            les_core::analysis::density_profile(&frames, a.axis, a.n_bins)?.to_table()
        }
        AnalyzeKind::Orientation(_) => {
            les_core::analysis::orientation_profile(&frames, a.axis, a.n_bins, a.charges())?
                .to_table()
        }
        AnalyzeKind::Dipolecorr(_) => {
            les_core::analysis::dipole_k_correlation(&frames, a.axis, a.n_kmax, a.charges())?
                .to_table()
        }
    };
    let out = output_dir(&cfg)?;
    write_text(&out.join(format!("{name}.txt")), &table)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// kinfo

fn cmd_kinfo(args: KinfoArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common.config, &args.common.overrides)?;
    let cell = if let Some(l) = args.length {
        Cell::cubic(l)?
    } else if let Some(init) = &cfg.data.init {
        read_dataset(init)?[0].cell
    } else {
        return Err(Failure::user("kinfo requires --length or data.init"));
    };
    let ks = KSpace::build(cell, cfg.lr.sigma, cfg.lr.k_cut, SumMode::Half)?;
    println!(
        "cell: {} x {} x {} A",
        cell.lengths.x, cell.lengths.y, cell.lengths.z
    );
    println!("sigma: {} A", cfg.lr.sigma);
    println!("k_cut: {} 1/A", cfg.lr.k_cut);
    println!("n_max: [{}, {}, {}]", ks.n_max[0], ks.n_max[1], ks.n_max[2]);
    println!("k-vectors (half-space): {}", ks.len());
    println!("k-vectors (full-space): {}", 2 * ks.len());

    // Group by |k|² into shells; list the first few.
    let mut shells: Vec<(f64, usize)> = Vec::new();
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by(|&i, &j| ks.ksq[i].total_cmp(&ks.ksq[j]));
    for &i in &order {
        match shells.last_mut() {
            Some((k2, count)) if (ks.ksq[i] - *k2).abs() < 1e-9 => *count += 1,
            _ => shells.push((ks.ksq[i], 1)),
        }
    }
    println!("first shells (|k| in 1/A, full-space vector count):");
    for (k2, count) in shells.iter().take(8) {
        println!("  {:.6} -> {}", k2.sqrt(), 2 * count);
    }
    Ok(())
}
