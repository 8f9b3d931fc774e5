//! `sodalab` command-line front end.

mod commands;
mod config;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sodalab::corpus::{Domain, Factor};
use sodalab::finetune::{Portion, Scope, Task};
use sodalab::specialize::Method;

/// Sociodemographic specialization experiments on synthetic review corpora.
///
/// Settings come from the `--config` TOML document; command-line flags
/// override the matching config keys, and anything unset falls back to the
/// built-in defaults. The fully resolved configuration is written next to
/// every command's outputs.
#[derive(Debug, Parser)]
#[command(name = "sodalab", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Keep existing grid results and skip their cells.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpora, splits and manifests.
    Generate,
    /// Specialize an encoder with MLM or MTL-W.
    Specialize(SpecializeArgs),
    /// Fine-tune an encoder on one task and score it.
    Finetune(FinetuneArgs),
    /// Run the experiment grid (resumable).
    Grid(GridArgs),
    /// Meta-regression over the grid results.
    Analyze,
    /// t-SNE projection of dev-set CLS representations.
    Project(ProjectArgs),
    /// Result tables from the grid results.
    Report,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?} (mlm, mtl-cls, mtl-ctx)"))
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    Scope::parse(s).ok_or_else(|| format!("unknown scope {s:?} (mono, multi)"))
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    Domain::parse(s).ok_or_else(|| format!("unknown domain {s:?} (in, out)"))
}

fn parse_factor(s: &str) -> Result<Factor, String> {
    Factor::parse(s).ok_or_else(|| format!("unknown factor {s:?} (gender, age)"))
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).ok_or_else(|| format!("unknown task {s:?} (SA, TD, AC-SA, AC-TD)"))
}

fn parse_portion(s: &str) -> Result<Portion, String> {
    Portion::parse(s).ok_or_else(|| format!("unknown portion {s:?} (group0, group1, X)"))
}

#[derive(Debug, Default, Args)]
pub struct SpecializeArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_scope)]
    pub scope: Option<Scope>,
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<Domain>,
    /// Language of a monolingual run.
    #[arg(long)]
    pub language: Option<usize>,
    #[arg(long, value_parser = parse_factor)]
    pub factor: Option<Factor>,
}

#[derive(Debug, Default, Args)]
pub struct FinetuneArgs {
    /// Encoder checkpoint; the vanilla encoder when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long, value_parser = parse_portion)]
    pub portion: Option<Portion>,
    #[arg(long)]
    pub language: Option<usize>,
    #[arg(long, value_parser = parse_factor)]
    pub factor: Option<Factor>,
}

#[derive(Debug, Default, Args)]
pub struct GridArgs {
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_factor)]
    pub factor: Option<Factor>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(status) => status,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
