use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mrxlate_cli::{
    EvaluateArgs, Predictions, PrepareArgs, ServeArgs, TrainArgs, TranslateArgs, DATA_ROOT_ENV,
};
use mrxlate_core::data::{Direction, DEFAULT_SLICE_INDEX};
use mrxlate_core::metrics::{InfoUnit, DEFAULT_BINS};
use mrxlate_core::models::ModelKind;
use mrxlate_study::Composition;

/// T1/T2 MR contrast translation: data preparation, training, translation,
/// evaluation and the blinded rating study.
#[derive(Parser)]
#[command(name = "mrxlate", version)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discover T1/T2 pairs under a data root and write a train/test manifest.
    Prepare {
        /// Dataset root with T1/ and T2/ folders.
        #[arg(long, env = DATA_ROOT_ENV)]
        root: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SLICE_INDEX)]
        slice_index: usize,
        #[arg(long, default_value_t = 900)]
        n_train: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "manifest.json")]
        out: PathBuf,
    },
    /// Write a synthetic phantom dataset in the T1/T2 folder layout.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        pairs: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model from a config file.
    Train(TrainCmd),
    /// Translate every image in a directory with a trained model.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_direction)]
        direction: Direction,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions on the test split of a manifest.
    Evaluate(EvaluateCmd),
    /// Serve the blinded rating study over HTTP.
    StudyServe(ServeCmd),
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `kind` in the config.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train in 64-bit floats instead of 32-bit.
    #[arg(long)]
    f64: bool,
}

#[derive(Args)]
struct EvaluateCmd {
    #[arg(long, conflicts_with = "pred_dir", required_unless_present = "pred_dir")]
    checkpoint: Option<PathBuf>,
    /// Predictions as <dir>/{T1,T2}/<subject>_syn.<ext>, by target domain.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Restrict to one direction; both by default.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Unit of mutual information: nats or bits.
    #[arg(long, default_value = "nats", value_parser = parse_unit)]
    mi_unit: InfoUnit,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeCmd {
    /// Real images as <dir>/{T1,T2}/*.
    #[arg(long)]
    real: PathBuf,
    /// Synthetic images as MODEL=DIR with DIR/{T1,T2}/*; repeatable.
    #[arg(long = "synthetic", value_parser = parse_tagged_dir)]
    synthetic: Vec<(ModelKind, PathBuf)>,
    #[arg(long, default_value = "sessions.jsonl")]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = mrxlate_study::session::DEFAULT_REAL)]
    real_count: usize,
    #[arg(long, default_value_t = mrxlate_study::session::DEFAULT_SYNTHETIC)]
    synthetic_count: usize,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: mrxlate_core::Error| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: mrxlate_core::Error| e.to_string())
}

fn parse_unit(s: &str) -> Result<InfoUnit, String> {
    s.parse().map_err(|e: mrxlate_core::Error| e.to_string())
}

fn parse_tagged_dir(s: &str) -> Result<(ModelKind, PathBuf), String> {
    let (tag, dir) = s.split_once('=').ok_or("expected MODEL=DIR")?;
    Ok((parse_kind(tag)?, PathBuf::from(dir)))
}

/// Returns the number of recorded failures.
fn run(cmd: Command) -> Result<usize> {
    match cmd {
        Command::Prepare {
            root,
            slice_index,
            n_train,
            seed,
            out,
        } => {
            mrxlate_cli::prepare(&PrepareArgs {
                root,
                slice_index: Some(slice_index),
                n_train,
                seed,
                out,
            })?;
            Ok(0)
        }
        Command::MakeToy { out, pairs, size, seed } => {
            mrxlate_cli::make_toy(&out, pairs, size, seed)?;
            Ok(0)
        }
        Command::Train(t) => {
            let o = mrxlate_cli::train(&TrainArgs {
                config: t.config,
                kind: t.kind,
                seed: t.seed,
                epochs: t.epochs,
                manifest: t.manifest,
                run_dir: t.run_dir,
                resume: t.resume,
                double: t.f64,
            })?;
            println!("{}", o.checkpoint.display());
            println!("{}", o.history.display());
            Ok(0)
        }
        Command::Translate {
            checkpoint,
            input,
            direction,
            output,
        } => {
            let s = mrxlate_cli::translate(&TranslateArgs {
                checkpoint,
                input,
                direction,
                output,
            })?;
            for (p, why) in &s.skipped {
                eprintln!("skipped {}: {why}", p.display());
            }
            println!("{} written, {} skipped", s.written.len(), s.skipped.len());
            Ok(s.skipped.len())
        }
        Command::Evaluate(e) => {
            let predictions = match (e.checkpoint, e.pred_dir) {
                (Some(c), _) => Predictions::Checkpoint(c),
                (None, Some(d)) => Predictions::Directory(d),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let r = mrxlate_cli::evaluate(&EvaluateArgs {
                predictions,
                manifest: e.manifest,
                directions: e.direction.map_or(Direction::BOTH.to_vec(), |d| vec![d]),
                bins: e.bins,
                mi_unit: e.mi_unit,
                out: e.out.clone(),
            })?;
            println!("{}", e.out.join("report.json").display());
            Ok(r.failures())
        }
        Command::StudyServe(s) => {
            let args = ServeArgs {
                real: s.real,
                synthetic: s.synthetic,
                store: s.store,
                host: s.host,
                port: s.port,
                seed: s.seed,
                composition: Composition::new(s.real_count, s.synthetic_count),
            };
            let state = mrxlate_cli::study_state(&args)?;
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
                    .await
                    .with_context(|| format!("binding {}:{}", args.host, args.port))?;
                mrxlate_cli::study_serve(state, listener).await
            })?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_secs().init();
    match run(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} failure(s) recorded");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
