//! `c3rec` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numerical failure.

mod config;

use std::path::Path;
use std::process::ExitCode;

use c3rec::data::{generate_synthetic, leave_one_out_split, load_dataset, save_dataset, InteractionDataset};
use c3rec::eval::{
    consensus_drift, evaluate, export_embeddings, popularity_baseline, DriftConfig, EvalConfig,
};
use c3rec::model::{load_checkpoint, C3Model};
use c3rec::train::{hyper_grid, train};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{resolve_run, resolve_synth, RunConfig, RunFlags, SynthFlags};

#[derive(Debug, Parser)]
#[command(name = "c3rec", version, about = "Transformer group recommender with member-masking contrastive training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-cluster synthetic dataset.
    Synth(SynthFlags),
    /// Split a dataset, train, and write checkpoints and the epoch log.
    Train(RunFlags),
    /// Rank held-out items with a checkpoint and write eval.json.
    Eval(RunFlags),
    /// Measure representation drift under member masking; writes drift.json.
    Robustness(RunFlags),
    /// Write original and masked group representations to embeddings.csv.
    ExportEmbeddings(RunFlags),
    /// Train over the threshold × mask ratio × β grid; writes grid.json.
    Grid(RunFlags),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(c3rec::Error),
}

impl From<c3rec::Error> for CliError {
    fn from(e: c3rec::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(c3rec::Error::Config(_)) => 1,
            CliError::Lib(e) if e.is_numerical() => 3,
            CliError::Lib(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(c3rec::Error::from)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Lib(c3rec::Error::Io { path: path.to_path_buf(), source })
}

fn split_dataset(cfg: &RunConfig) -> Result<InteractionDataset, CliError> {
    let ds = load_dataset(cfg.data_dir()?)?;
    Ok(leave_one_out_split(ds, cfg.train.seed))
}

fn load_model(cfg: &RunConfig, ds: &InteractionDataset) -> Result<C3Model, CliError> {
    let model = load_checkpoint(cfg.checkpoint_path())?;
    let m = model.config();
    if m.num_users != ds.num_users() || m.num_items != ds.num_items() {
        return Err(CliError::Lib(c3rec::Error::Data(format!(
            "checkpoint is for {} users and {} items, dataset has {} and {}",
            m.num_users,
            m.num_items,
            ds.num_users(),
            ds.num_items()
        ))));
    }
    Ok(model)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(flags) => {
            let out = flags
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("synth needs -o <dir>".into()))?;
            let cfg = resolve_synth(&flags)?;
            let ds = generate_synthetic(&cfg)?;
            save_dataset(&ds, &out)?;
            write_json(&out, "config.echo.json", &cfg)?;
            let s = ds.stats();
            println!(
                "wrote {} users, {} items, {} groups (avg size {:.2}) to {}",
                s.num_users,
                s.num_items,
                s.num_groups,
                s.avg_group_size,
                out.display()
            );
        }
        Command::Train(flags) => {
            let cfg = resolve_run(&flags)?;
            let ds = split_dataset(&cfg)?;
            write_json(&cfg.out, "config.echo.json", &cfg)?;
            let outcome = train(&ds, &cfg.train)?;
            outcome.write_to(&cfg.out)?;
            let log = &outcome.log;
            println!(
                "trained {} epochs; best epoch {} with validation group HR@10 {:.4}, NDCG@10 {:.4}",
                log.epochs.len(),
                log.best_epoch,
                log.best_val_group_hr10,
                log.best_val_group_ndcg10
            );
        }
        Command::Eval(flags) => {
            let cfg = resolve_run(&flags)?;
            let ds = split_dataset(&cfg)?;
            let model = load_model(&cfg, &ds)?;
            write_json(&cfg.out, "config.echo.json", &cfg)?;
            let ec = EvalConfig {
                n_eval_neg: cfg.train.n_eval_neg,
                seed: cfg.train.seed,
                target: cfg.target,
                execution: cfg.train.execution,
                include_users: true,
            };
            let report = evaluate(&model, &ds, &ec)?;
            let pop = evaluate(&popularity_baseline(&ds)?, &ds, &ec)?;
            write_json(&cfg.out, "eval.json", &report)?;
            print!("{}", report.to_table());
            println!(
                "popularity baseline HR@10: user {:.4}, group {:.4}",
                pop.user.hr_10, pop.group.hr_10
            );
        }
        Command::Robustness(flags) => {
            let cfg = resolve_run(&flags)?;
            let ds = split_dataset(&cfg)?;
            let model = load_model(&cfg, &ds)?;
            write_json(&cfg.out, "config.echo.json", &cfg)?;
            let dc = DriftConfig {
                mask_ratio: cfg.drift_ratio,
                trials: cfg.drift_trials,
                seed: cfg.train.seed,
                n_eval_neg: cfg.train.n_eval_neg,
                execution: cfg.train.execution,
            };
            let report = consensus_drift(&model, &ds, &dc)?;
            write_json(&cfg.out, "drift.json", &report)?;
            println!(
                "drift at mask ratio {}: mean cosine {:.4}, median {:.4}, mean rank change {:+.2} over {} groups",
                report.mask_ratio, report.mean_cosine, report.median_cosine, report.mean_rank_change, report.n_groups
            );
        }
        Command::ExportEmbeddings(flags) => {
            let cfg = resolve_run(&flags)?;
            let ds = split_dataset(&cfg)?;
            let model = load_model(&cfg, &ds)?;
            write_json(&cfg.out, "config.echo.json", &cfg)?;
            let path = cfg.out.join("embeddings.csv");
            let rows = export_embeddings(&model, &ds, cfg.drift_ratio, cfg.train.seed, &path)?;
            println!("wrote {rows} rows to {}", path.display());
        }
        Command::Grid(flags) => {
            let cfg = resolve_run(&flags)?;
            let ds = split_dataset(&cfg)?;
            write_json(&cfg.out, "config.echo.json", &cfg)?;
            let result = hyper_grid(&ds, &cfg.train, &cfg.grid())?;
            write_json(&cfg.out, "grid.json", &result)?;
            print!("{}", result.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
