use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rxai_cli::fixtures::write_telemetry_fixture;
use rxai_cli::pipeline::{self, with_threads};
use rxai_cli::{CliError, ExplainMethods, RunConfig};
use rxai_core::model::AttentionMode;

#[derive(Parser, Debug)]
#[command(name = "rxai", version, about = "Ransomware telemetry -> token sentences -> transformer -> explanations")]
struct Cli {
    /// Flat TOML run config; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input CSV as `path` or `path:source`. Repeatable; replaces config inputs.
    #[arg(long = "input", global = true)]
    inputs: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    sample_n: Option<usize>,
    #[arg(long, global = true)]
    attention_mode: Option<AttentionMode>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    explain_method: Option<ExplainMethods>,
    #[arg(long, global = true)]
    explain_n: Option<usize>,
    #[arg(long, global = true)]
    lime_samples: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batched inference and LIME perturbations.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, impute, bin and write prepared.csv plus column statistics.
    Prepare,
    /// Split, build the vocabulary, train and write model.ckpt.
    Train,
    /// Score the test split; write eval_report.json, roc.csv, attention CSVs.
    Evaluate,
    /// LIME and/or occlusion explanations for a class-balanced test subset.
    Explain,
    /// SVG views and embedding statistics from an evaluated run.
    Report,
    /// All five stages in order.
    Run,
    /// Write the two-source synthetic telemetry tables into DIR.
    Synth {
        dir: PathBuf,
    },
    /// Print the effective config as TOML.
    ShowConfig,
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !cli.inputs.is_empty() {
        c.inputs = cli.inputs.clone();
    }
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = cli.$flag.clone() {
                c.$field = v;
            }
        };
    }
    set!(seed => seed);
    set!(attention_mode => attention_mode);
    set!(epochs => epochs);
    set!(lr => learning_rate);
    set!(explain_method => explain_method);
    set!(explain_n => explain_n);
    set!(lime_samples => lime_samples);
    set!(out => out);
    set!(threads => threads);
    if cli.sample_n.is_some() {
        c.sample_n = cli.sample_n;
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = effective_config(&cli)?;
    let print = |v: serde_json::Value| println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
    with_threads(config.threads, || {
        match &cli.command {
            Command::Prepare => print(serde_json::to_value(pipeline::cmd_prepare(&config)?)?),
            Command::Train => {
                let h = pipeline::cmd_train(&config)?;
                print(serde_json::to_value(&h.epochs)?)
            }
            Command::Evaluate => {
                let r = pipeline::cmd_evaluate(&config)?;
                print(serde_json::json!({
                    "confusion": r.report.confusion,
                    "metrics": r.report.metrics,
                    "auc": r.report.auc,
                    "flags": r.report.flags,
                }))
            }
            Command::Explain => {
                let s = pipeline::cmd_explain(&config)?;
                let methods: Vec<String> = s.iter().map(|f| f.method.to_string()).collect();
                print(serde_json::json!({ "methods": methods, "rows": s.first().map(|f| f.rows.len()) }))
            }
            Command::Report => print(serde_json::to_value(pipeline::cmd_report(&config)?)?),
            Command::Run => print(serde_json::to_value(pipeline::run_all(&config)?)?),
            Command::Synth { dir } => {
                let paths = write_telemetry_fixture(dir, config.seed)?;
                for p in paths {
                    println!("{}", p.display());
                }
            }
            Command::ShowConfig => print!("{}", config.to_toml()),
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rxai: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
