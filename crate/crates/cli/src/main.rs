use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmfm_cli::commands;
use dmfm_cli::{CliError, CliResult, RunConfig};

/// Dynamic matrix factor models: simulate, estimate and replicate.
#[derive(Parser)]
#[command(name = "dmfm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel with its mask and truth files.
    Simulate(Flags),
    /// Estimate a model on a panel file.
    Estimate(Flags),
    /// Run a Monte Carlo comparison table.
    Replicate(Flags),
    /// Log-likelihood by EM iteration in stationary and levels mode.
    LoglikFigure(Flags),
}

#[derive(Args)]
struct Flags {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// T1, T2, T3 or T4.
    #[arg(long)]
    table: Option<String>,
    /// stationary or levels.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    missing_aware: bool,
    #[arg(long)]
    separate_mar: bool,
    #[arg(long)]
    k1: Option<String>,
    #[arg(long)]
    k2: Option<String>,
    /// Panel file to estimate.
    #[arg(long)]
    panel: Option<String>,
    /// Truth file for accuracy metrics.
    #[arg(long)]
    truth: Option<String>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    threads: Option<String>,
    /// Any configuration key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    /// File settings overridden by flags.
    fn resolve(self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut flags = RunConfig::default();
        let mut set = |k: &str, v: &str| flags.set(k, v).map_err(CliError::Usage);
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{pair}'")))?;
            set(k.trim(), v)?;
        }
        let named = [
            ("seed", &self.seed),
            ("reps", &self.reps),
            ("out", &self.out),
            ("table", &self.table),
            ("mode", &self.mode),
            ("k1", &self.k1),
            ("k2", &self.k2),
            ("panel", &self.panel),
            ("truth", &self.truth),
            ("threads", &self.threads),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                set(k, v)?;
            }
        }
        if self.missing_aware {
            set("missing_aware", "true")?;
        }
        if self.separate_mar {
            set("separate_mar", "true")?;
        }
        cfg.merge(flags);
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Simulate(f) => commands::simulate(&f.resolve()?),
        Command::Estimate(f) => commands::estimate(&f.resolve()?),
        Command::Replicate(f) => commands::replicate(&f.resolve()?),
        Command::LoglikFigure(f) => commands::loglik_figure(&f.resolve()?),
    }
}

fn fail(e: &CliError) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error[{}]: {msg}", e.category());
    ExitCode::from(if e.category() == "usage" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return fail(&CliError::Usage(first));
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
