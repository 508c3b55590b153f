use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use slt_core::mediator::{self, MediatorConfig};
use slt_core::session::{run_session, SessionRunConfig};
use slt_core::workers::TimeMode;

mod eval;
mod worker;

const DEFAULT_MEDIATOR: &str = "127.0.0.1:9999";

#[derive(Parser)]
#[command(
    name = "slt",
    version,
    about = "Cascaded simultaneous speech translation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mediator.
    Serve {
        #[arg(long, env = "MEDIATOR_ADDR", default_value = DEFAULT_MEDIATOR)]
        listen: String,
        #[arg(long, default_value_t = mediator::DEFAULT_QUEUE_CAPACITY)]
        queue: usize,
    },
    /// Register a worker with a mediator and serve sessions.
    #[command(subcommand)]
    Worker(worker::WorkerCommand),
    /// Run one document through asr -> punct -> mt on a mediator.
    Run(RunArgs),
    /// Score hypotheses or render the report tables.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Render the report tables from a results directory.
    Report(eval::ReportArgs),
    /// Punctuation model utilities.
    #[command(subcommand)]
    Punct(PunctCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    doc: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_lang: Option<String>,
    /// Time base: virtual (reproducible) or wall.
    #[arg(long)]
    mode: Option<TimeMode>,
    /// Use this mediator instead of an in-process one.
    #[arg(long)]
    mediator: Option<String>,
    #[arg(long)]
    punct_model: Option<PathBuf>,
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    mask_k: Option<usize>,
    #[arg(long)]
    stability: Option<String>,
    /// Any config setting, e.g. --set asr.p_sub=0.2 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

#[derive(Subcommand)]
enum PunctCommand {
    /// Train a count-based punctuation model on punctuated text.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also train a truecaser and write it here.
        #[arg(long)]
        truecase_out: Option<PathBuf>,
        #[arg(long, default_value_t = slt_core::punctuation::DEFAULT_WINDOW_BEFORE)]
        window_before: usize,
        #[arg(long, default_value_t = slt_core::punctuation::DEFAULT_WINDOW_AFTER)]
        window_after: usize,
    },
}

/// Evaluation input that does not exist.
#[derive(Debug)]
pub struct MissingInput(pub String);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "evaluation input missing: {}", self.0)
    }
}

impl std::error::Error for MissingInput {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use slt_core::Error as E;
    for cause in err.chain() {
        if cause.is::<MissingInput>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_)
                | E::MalformedService(_)
                | E::IncompatibleCascade
                | E::Parse { .. }
                | E::InvalidToken(_)
                | E::EmptyCorpus => 2,
                E::EmptyReference
                | E::NoSamples
                | E::TooFewSamples { .. }
                | E::LengthMismatch(_) => 4,
                _ => 3,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MEDIATOR_LOG", "info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Serve { listen, queue } => serve(&listen, queue).map(|()| 0),
        Command::Worker(w) => worker::run(w).map(|()| 0),
        Command::Run(args) => run(args).map(|()| 0),
        Command::Eval(e) => eval::run(e),
        Command::Report(r) => eval::report(&r),
        Command::Punct(PunctCommand::Train {
            corpus,
            out,
            truecase_out,
            window_before,
            window_after,
        }) => {
            let lines = slt_core::fixture::read_lines(&corpus)
                .with_context(|| format!("reading corpus {}", corpus.display()))?;
            let model =
                slt_core::punctuation::train_count_model(&lines, window_before, window_after)?;
            model.save(&out)?;
            println!("wrote {} ({} rows)", out.display(), model.len());
            if let Some(path) = truecase_out {
                slt_core::punctuation::TruecaseModel::train(&lines).save(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
    }
}

pub fn serve(listen: &str, queue: usize) -> Result<()> {
    let config = MediatorConfig {
        queue_capacity: queue,
        ..MediatorConfig::default()
    };
    let handle = mediator::spawn(listen, config)
        .map_err(|e| slt_core::Error::Config(format!("listen on {listen}: {e}")))?;
    log::info!("mediator listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = SessionRunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    let here = std::path::Path::new(".");
    let mut set = |key: &str, value: Option<String>| -> Result<()> {
        if let Some(v) = value {
            cfg.set(key, &v, here)?;
        }
        Ok(())
    };
    let path = |p: Option<PathBuf>| p.map(|p| p.display().to_string());
    set("doc", path(args.doc))?;
    set("out", path(args.out))?;
    set("seed", args.seed.map(|s| s.to_string()))?;
    set("target_lang", args.target_lang)?;
    set("mediator", args.mediator)?;
    set("punct.model", path(args.punct_model))?;
    set("mt.transform", args.transform)?;
    set("mt.dict", path(args.dict))?;
    set("wrapper.mask_k", args.mask_k.map(|k| k.to_string()))?;
    set("wrapper.stability", args.stability)?;
    for s in &args.settings {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            slt_core::Error::Config(format!("--set expects KEY=VALUE, got {s:?}"))
        })?;
        cfg.set(k.trim(), v.trim(), here)?;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if cfg.doc_dir.as_os_str().is_empty() || cfg.out_dir.as_os_str().is_empty() {
        return Err(slt_core::Error::Config(
            "both a document (--doc) and an output dir (--out) are required".into(),
        )
        .into());
    }

    let summary = run_session(&cfg)?;
    println!("cascade      {}", summary.cascade);
    println!("sentences    {}", summary.translations.len());
    println!("emissions    {}", summary.received.len());
    println!("mt batches   {}", summary.report.batches.len());
    if let Some(s) = summary.latency {
        println!("batch ms     {:.2} ± {:.2}", s.avg, s.std);
    }
    println!("output       {}", summary.out_dir.display());
    Ok(())
}
