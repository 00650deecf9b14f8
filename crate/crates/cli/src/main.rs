use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hardmix_core::config::{Overrides, PipelineConfig};
use hardmix_core::pipeline::{self, PipelineError};
use hardmix_core::sampler::PlanFormat;

#[derive(Parser, Debug)]
#[command(
    name = "hardmix",
    version,
    about = "Filter, score and adaptively sample mixed real/generated robot demonstrations"
)]
struct Cli {
    /// TOML pipeline configuration; EMMA_* variables and flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: OverrideArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct OverrideArgs {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Probability that a slot draws a generated sample.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    total_steps: Option<u64>,
    #[arg(long, global = true)]
    switch_step: Option<u64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Maximum scored action-chunk length.
    #[arg(long, global = true)]
    window: Option<usize>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            alpha: self.alpha,
            gamma: self.gamma,
            lambda: self.lambda,
            seed: self.seed,
            total_steps: self.total_steps,
            switch_step: self.switch_step,
            batch_size: self.batch_size,
            strata_mode: None,
            window: self.window,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Jsonl,
    Binary,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure generated samples and write verdicts beside the manifest.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the quality report (default: beside the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute per-sample raw and unified scores.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write weight tables and the batch plan for a step range.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Half-open step range `A..B` (default: the whole schedule).
        #[arg(long, value_parser = pipeline::parse_steps)]
        steps: Option<Range<u64>>,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Summarize behavior scores and success rates from episode logs.
    Eval {
        #[arg(long)]
        logs: PathBuf,
        /// Rule tables (default: the built-in tables).
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Print execution time, smoothness and joint-overlimit per task.
    Exec {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        task: Option<String>,
    },
    /// Run filter, score and sample on a synthetic cohort.
    Demo {
        #[arg(long, default_value = "hardmix-demo")]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let env = Overrides::from_env()?;
    Ok(PipelineConfig::resolve(
        cli.config.as_deref(),
        &env,
        &cli.overrides.to_overrides(),
    )?)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Filter { manifest, out } => {
            let cfg = resolve_config(&cli)?;
            let outcome = pipeline::run_filter(manifest, &cfg, out.as_deref())?;
            println!("{}", outcome.summary());
            println!("quality report: {}", outcome.report_path.display());
            println!("filtered manifest: {}", outcome.manifest_path.display());
        }
        Command::Score { manifest, out } => {
            let cfg = resolve_config(&cli)?;
            let outcome = pipeline::run_score(manifest, &cfg, out)?;
            let scored = outcome.records.iter().filter(|r| r.normalized.is_some()).count();
            println!(
                "scored {scored}/{} samples into {}",
                outcome.records.len(),
                out.display()
            );
        }
        Command::Sample {
            manifest,
            scores,
            out,
            steps,
            format,
        } => {
            let cfg = resolve_config(&cli)?;
            let steps = steps.clone().unwrap_or(0..cfg.sampler.total_steps);
            let format = match format {
                Format::Jsonl => PlanFormat::Jsonl,
                Format::Binary => PlanFormat::Binary,
            };
            let outcome = pipeline::run_sample(manifest, scores.as_deref(), &cfg, steps, out, format)?;
            println!("{} draws written to {}", outcome.draws, outcome.plan_path.display());
            for s in &outcome.refresh_steps {
                println!("refresh marker at step {s}");
            }
        }
        Command::Eval { logs, rules } => {
            print!("{}", pipeline::run_eval(logs, rules.as_deref())?);
        }
        Command::Exec { manifest, task } => {
            print!("{}", pipeline::run_exec(manifest, task.as_deref())?);
        }
        Command::Demo { out } => {
            let seed = resolve_config(&cli)?.sampler.seed;
            std::fs::create_dir_all(out).map_err(|source| PipelineError::Io {
                path: out.clone(),
                source,
            })?;
            let outcome = pipeline::run_demo(seed, out)?;
            println!("{}", outcome.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
