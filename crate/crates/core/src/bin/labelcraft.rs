use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use labelcraft::corpus::{write_dataset, Format};
use labelcraft::pipeline::{self, RunArgs, StageError};
use labelcraft::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "labelcraft", version, about = "Automated label functions for weak supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one dataset.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// One run per value of a single parameter.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// alpha, beta, k or abstain
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.0,0.5,0.9 or on,off
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Score exported labels against a gold dataset.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the bundled synthetic corpora (separable.jsonl, noisy.jsonl).
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn fail(e: StageError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, data, out, seed_override } => {
            let args = RunArgs { config, data, out, seed_override, ledger: None };
            match pipeline::cmd_run(&args) {
                Ok((manifest, _)) => {
                    println!("{}", serde_json::to_string_pretty(&manifest).unwrap_or_default());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Sweep { config, data, out, param, values, seed_override } => {
            let param = match param.parse() {
                Ok(p) => p,
                Err(error) => return fail(StageError { stage: "config", error }),
            };
            match pipeline::cmd_sweep(config.as_deref(), &data, param, &values, &out, seed_override) {
                Ok(rows) => {
                    for r in rows {
                        println!("{}", serde_json::to_string(&r).unwrap_or_default());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Eval { labels, data, out, config } => {
            match pipeline::cmd_eval(&labels, &data, &out, config.as_deref()) {
                Ok(report) => {
                    println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::GenSynth { out, seed } => {
            let write = || -> labelcraft::Result<()> {
                std::fs::create_dir_all(&out).map_err(|e| labelcraft::Error::Io { path: out.clone(), source: e })?;
                for (name, cfg) in [("separable", SynthConfig::separable()), ("noisy", SynthConfig::noisy())] {
                    let corpus = generate(&cfg, seed)?;
                    write_dataset(&corpus.dataset, &out.join(format!("{name}.jsonl")), Format::Jsonl)?;
                }
                Ok(())
            };
            match write() {
                Ok(()) => ExitCode::SUCCESS,
                Err(error) => fail(StageError { stage: "gen-synth", error }),
            }
        }
    }
}
