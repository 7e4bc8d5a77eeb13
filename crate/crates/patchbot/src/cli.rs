//! Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use patchbot_core::feedback::{ReasonCategory, Verdict};
use patchbot_core::ingest::parse_timestamp;
use patchbot_core::pipeline::ReportFormat;
use serde::Serialize;

use crate::config::Config;
use crate::error::AppError;
use crate::ops::{self, FeedbackInput};

#[derive(Debug, Parser)]
#[command(
    name = "patchbot",
    version,
    about = "Triage kernel patches for backporting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Window start (author date), epoch seconds or ISO-8601.
    #[arg(long, value_name = "TS", value_parser = timestamp, requires = "until")]
    pub since: Option<i64>,
    /// Window end, exclusive.
    #[arg(long, value_name = "TS", value_parser = timestamp, requires = "since")]
    pub until: Option<i64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect commits from the repository into the store.
    Ingest {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Train a model bundle from a labelled corpus.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score stored patches and write a report.
    Predict {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        #[arg(long, default_value = "json", value_parser = ["json", "markdown"])]
        format: String,
    },
    /// Record reviewer verdicts.
    Feedback {
        #[command(subcommand)]
        action: FeedbackCommand,
    },
    /// Retrain from the base corpus plus recorded verdicts.
    Retrain {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Print model and keyword-baseline metrics on a labelled corpus.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Score without the stable-tag revision.
        #[arg(long)]
        no_ccstable: bool,
    },
    /// Write a labelled corpus built from the stored patches.
    Label {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum FeedbackCommand {
    Add {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        sha: String,
        #[arg(long, conflicts_with = "reject", required_unless_present = "reject")]
        accept: bool,
        #[arg(long, value_name = "REASON", value_parser = reason)]
        reject: Option<ReasonCategory>,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long, default_value = "")]
        reviewer: String,
    },
}

fn timestamp(s: &str) -> Result<i64, String> {
    parse_timestamp(s)
        .ok_or_else(|| format!("`{s}` is not epoch seconds, an RFC 3339 time or YYYY-MM-DD"))
}

fn reason(s: &str) -> Result<ReasonCategory, String> {
    ReasonCategory::parse(s).ok_or_else(|| {
        let all: Vec<&str> = ReasonCategory::ALL.iter().map(|r| r.as_str()).collect();
        format!("expected one of {}", all.join(", "))
    })
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), AppError> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load(config: &ConfigArg) -> Result<Config, AppError> {
    Config::load(&config.config)
}

fn window(
    cfg: &Config,
    w: &WindowArgs,
) -> Result<Option<patchbot_core::ingest::MonitorWindow>, AppError> {
    ops::window_from(w.since, w.until, cfg.period_days)
}

fn write_report(path: &Path, text: &str) -> Result<(), AppError> {
    std::fs::write(path, text)
        .map_err(|e| AppError::internal("io", format!("{}: {e}", path.display())))
}

pub fn execute(cmd: Command, out: &mut dyn Write, now: i64) -> Result<(), AppError> {
    match cmd {
        Command::Ingest { config, window: w } => {
            let cfg = load(&config)?;
            print_json(out, &ops::ingest(&cfg, window(&cfg, &w)?, now)?)
        }
        Command::Train {
            config,
            corpus,
            out: dir,
        } => {
            let cfg = load(&config)?;
            print_json(out, &ops::train(&cfg, &corpus, &dir)?)
        }
        Command::Predict {
            config,
            window: w,
            report,
            format,
        } => {
            let cfg = load(&config)?;
            let format: ReportFormat = format
                .parse()
                .map_err(|e: String| AppError::bad_request("usage", e))?;
            let bundle = ops::load_bundle(&cfg.bundle_dir)?;
            let prediction = ops::predict(&cfg, &bundle, window(&cfg, &w)?, format)?;
            write_report(&report, &prediction.report)?;
            print_json(out, &prediction.funnel)
        }
        Command::Feedback {
            action:
                FeedbackCommand::Add {
                    config,
                    sha,
                    accept,
                    reject,
                    note,
                    reviewer,
                },
        } => {
            let cfg = load(&config)?;
            let verdict = if accept {
                Verdict::Accepted
            } else {
                Verdict::Rejected
            };
            let input = FeedbackInput {
                verdict,
                reason: reject,
                note,
                reviewer,
            };
            print_json(out, &ops::add_feedback(&cfg, &sha, input, now)?)
        }
        Command::Retrain { config, out: dir } => {
            let cfg = load(&config)?;
            print_json(out, &ops::retrain(&cfg, &dir)?)
        }
        Command::Serve { config } => crate::api::serve(load(&config)?),
        Command::Eval {
            config,
            corpus,
            no_ccstable,
        } => {
            let cfg = load(&config)?;
            let bundle = ops::load_bundle(&cfg.bundle_dir)?;
            let corpus = ops::read_corpus(&corpus)?;
            print_json(out, &ops::eval(&cfg, &bundle, &corpus, !no_ccstable)?)
        }
        Command::Label { config, out: path } => {
            let cfg = load(&config)?;
            let corpus = ops::label(&cfg)?;
            ops::write_corpus(&path, &corpus)?;
            let bugfix = corpus
                .iter()
                .filter(|lp| lp.label == patchbot_core::ingest::Label::BugFix)
                .count();
            print_json(
                out,
                &serde_json::json!({ "out": path, "patches": corpus.len(), "bugfix": bugfix }),
            )
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, now: i64) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, out, now) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
