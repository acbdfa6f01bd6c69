//! Command-line front end for the benchmark pipeline.
//!
//! Every subcommand reads one TOML run configuration and executes a slice
//! of the pipeline against the run's output directory. Artifacts persist
//! between invocations, so `advppm ingest && advppm train && advppm attack`
//! is equivalent to the corresponding prefix of `advppm run`.

use std::path::PathBuf;
use std::process::ExitCode;

use advppm::harness::{self, RunConfig, Stage};
use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "advppm",
    version,
    about = "Adversarial robustness benchmark for outcome-oriented predictive process monitoring"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(short, long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Output directory; overrides both the configuration and ADVPPM_OUT.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Materialize the event log and derive the train/test prefix logs.
    Ingest,
    /// Generate the synthetic event log only.
    Synth,
    /// Train the classifier, its decision threshold and the class manifolds.
    Train,
    /// Run the configured attacks over the test prefixes.
    Attack,
    /// Compute the distance panel for every attack row.
    Evaluate,
    /// Assign quartile-based cluster profiles to the evaluated results.
    Profile,
    /// Emit the summary, success-by-length and profile-count reports.
    Report,
    /// Execute the full pipeline end to end.
    Run,
}

impl Command {
    fn stages(self) -> &'static [Stage] {
        match self {
            Command::Synth => &[Stage::Ingest],
            Command::Ingest => &[Stage::Ingest, Stage::Split],
            Command::Train => &[Stage::Train],
            Command::Attack => &[Stage::Attack],
            Command::Evaluate => &[Stage::Evaluate],
            Command::Profile => &[Stage::Profile],
            Command::Report => &[Stage::Report],
            Command::Run => &Stage::ALL,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let config = RunConfig::from_path(&cli.config)
        .with_context(|| format!("loading configuration {}", cli.config.display()))?;
    if matches!(cli.command, Command::Synth) && config.log.synthetic.is_none() {
        anyhow::bail!(
            "`synth` needs a [log.synthetic] section in {}; use `ingest` for file sources",
            cli.config.display()
        );
    }
    let env_override = std::env::var(harness::OUTPUT_DIR_ENV).ok();
    let out = harness::resolve_output_dir(&config, cli.out.as_deref(), env_override.as_deref());
    let manifest = harness::run_stages(&config, &out, cli.command.stages())?;
    for stage in cli.command.stages() {
        if let Some(record) = manifest.stages.get(stage.name()) {
            println!("{}: {}", stage.name(), record.artifacts.join(", "));
        }
    }
    println!("run `{}` ({}) -> {}", manifest.run_name, manifest.config_hash, out.display());
    Ok(())
}
