use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use isect_core::generation::{BackendKind, ModelSpec};
use isect_core::harness::{emit_report, Audit, AuditError, ReportFormat, POOLED_ID};

/// Audit a language model for intersectional bias in sentiment.
#[derive(Debug, Parser)]
#[command(name = "isect-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Audit config (JSON); relative paths inside resolve against its directory.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Replace every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the prompt battery as JSONL.
    Battery {
        #[command(flatten)]
        common: Common,
        /// Write to a file instead of stdout.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Collect completions into the cache.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Only this model; may name a model absent from the config.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_parser = ["stub", "http"])]
        backend: Option<String>,
        #[arg(long, value_name = "URL")]
        endpoint: Option<String>,
    },
    /// Score cached completions.
    Score {
        #[command(flatten)]
        common: Common,
    },
    /// Group statistics and bias findings.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Topic models for the high- and low-scoring prompt pools.
    Topics {
        #[command(flatten)]
        common: Common,
    },
    /// Write the report and print it.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "markdown", value_name = "json|markdown")]
        format: String,
    },
    /// Every stage in order, skipping those already up to date.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Battery { common, .. }
            | Command::Generate { common, .. }
            | Command::Score { common }
            | Command::Analyze { common }
            | Command::Topics { common }
            | Command::Report { common, .. }
            | Command::Run { common } => common,
        }
    }
}

fn model_for(
    audit: &Audit,
    id: &str,
    backend: Option<&str>,
    endpoint: Option<&str>,
) -> anyhow::Result<ModelSpec> {
    anyhow::ensure!(id != POOLED_ID, "model id `{POOLED_ID}` is reserved");
    let mut spec = audit
        .config()
        .generation
        .models
        .iter()
        .find(|m| m.model_id == id)
        .cloned()
        .unwrap_or_else(|| ModelSpec::stub(id));
    if let Some(b) = backend {
        spec.backend = b.parse::<BackendKind>().map_err(anyhow::Error::msg)?;
    }
    if let Some(e) = endpoint {
        spec.endpoint = Some(e.to_string());
    }
    spec.validate().map_err(anyhow::Error::msg)?;
    Ok(spec)
}

fn execute(command: &Command) -> anyhow::Result<()> {
    let common = command.common();
    let audit = Audit::from_path(&common.config, common.seed)?;
    match command {
        Command::Battery { output, .. } => {
            let jsonl = audit.battery().to_jsonl();
            match output {
                Some(path) => {
                    fs::write(path, jsonl).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{jsonl}"),
            }
        }
        Command::Generate {
            model,
            backend,
            endpoint,
            ..
        } => match model {
            Some(id) => {
                let spec = model_for(&audit, id, backend.as_deref(), endpoint.as_deref())?;
                let n = audit.generate_model(&spec)?;
                log::info!("{n} completions cached for {}", spec.model_id);
            }
            None => {
                anyhow::ensure!(
                    backend.is_none() && endpoint.is_none(),
                    "--backend and --endpoint need --model"
                );
                audit.write_battery()?;
                audit.generate()?;
            }
        },
        Command::Score { .. } => audit.score()?,
        Command::Analyze { .. } => audit.analyze()?,
        Command::Topics { .. } => {
            audit.topics()?;
        }
        Command::Report { format, .. } => {
            let format: ReportFormat = format.parse()?;
            let report = audit.report()?;
            print!("{}", emit_report(&report, format));
        }
        Command::Run { .. } => {
            audit.run()?;
            println!("{}", audit.report_dir().join("report.md").display());
        }
    }
    Ok(())
}

/// The error chain, skipping causes a parent message already spells out.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg = format!("{msg}: {text}");
        }
    }
    msg
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<AuditError>()
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
