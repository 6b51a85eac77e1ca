//! `mvre`: reproducible runs over the multi-view prompt-tuning library.
//!
//! Failures print one line `error[<kind>]: <reason>` on stderr. Kind
//! `config` (exit 2) means nothing was written; kind `run` exits 1.

mod commands;
mod config;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use commands::Ctx;

#[derive(Parser)]
#[command(name = "mvre", version, about = "Multi-view prompt-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config; keys missing from it keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Replaces the top-level `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted override, e.g. `train.m=4`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthetic corpus: dataset.jsonl, schema.json, layout.json.
    GenerateCorpus,
    /// Masked-token pretraining of the base model.
    Pretrain,
    /// One prompt-tuning run on a k-shot episode.
    Train,
    /// Micro-F1 of a trained checkpoint on a dataset file.
    Eval,
    /// Mean F1 over seeds for each m.
    SweepM,
    /// 1-mask at k shots against m masks at k/m shots.
    SimProtocol,
    /// Tokens dynamic initialization picks for every (relation, view).
    ProbeInit,
    /// Relevance of each virtual word to each aspect.
    AnalyzeViews,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenerateCorpus => "generate-corpus",
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::SweepM => "sweep-m",
            Command::SimProtocol => "sim-protocol",
            Command::ProbeInit => "probe-init",
            Command::AnalyzeViews => "analyze-views",
        }
    }

    fn run(self, ctx: &Ctx) -> Result<Vec<PathBuf>> {
        match self {
            Command::GenerateCorpus => commands::generate_corpus(ctx),
            Command::Pretrain => commands::pretrain(ctx),
            Command::Train => commands::train_cmd(ctx),
            Command::Eval => commands::eval(ctx),
            Command::SweepM => commands::sweep(ctx),
            Command::SimProtocol => commands::sim_protocol(ctx),
            Command::ProbeInit => commands::probe_init(ctx),
            Command::AnalyzeViews => commands::analyze_views(ctx),
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("MVRE_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(anyhow!(
                "MVRE_THREADS must be a positive integer, got `{s}`"
            )),
        },
        Err(_) => Ok(None),
    }
}

fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Timestamps live only here so every other output is deterministic.
fn log_line(out: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("run.log"))?;
    writeln!(f, "{:.3} {line}", unix_time())?;
    Ok(())
}

fn execute(cli: &Cli, ctx: &Ctx) -> Result<()> {
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    let name = cli.command.name();
    log_line(&ctx.out, &format!("{name} start"))?;
    let echo = ctx.out.join("config.json");
    fs::write(&echo, serde_json::to_string_pretty(&ctx.config)? + "\n")?;
    let started = Instant::now();
    let result = cli.command.run(ctx);
    let wall = started.elapsed().as_secs_f64();
    match &result {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            log_line(&ctx.out, &format!("{name} done wall_time={wall:.3}s"))?;
        }
        Err(e) => log_line(
            &ctx.out,
            &format!("{name} failed wall_time={wall:.3}s: {}", one_line(e)),
        )?,
    }
    result.map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let setup =
        config::resolve(cli.config.as_deref(), &cli.overrides, cli.seed).and_then(|config| {
            if let Some(n) = threads_from_env()? {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()?;
            }
            Ok(config)
        });
    let config = match setup {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error[config]: {}", one_line(&e));
            return ExitCode::from(2);
        }
    };
    let ctx = Ctx {
        config,
        out: cli.out.clone(),
    };
    match execute(&cli, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[run]: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
