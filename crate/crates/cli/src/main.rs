//! `wdro`: reproducible command-line runs of robust off-policy evaluation
//! and learning. Every command writes CSV and, on request, a JSON manifest
//! from which `wdro replay` re-creates the outputs.

mod commands;
mod error;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{
    CompareArgs, DistanceArgs, OpeArgs, OplArgs, RadiusArgs, RateArgs, ReplayArgs, SynthArgs,
};
use error::CliError;
use manifest::RunManifest;

#[derive(Debug, Parser, Serialize)]
#[command(name = "wdro", version, about = "Wasserstein-robust off-policy evaluation and learning")]
pub struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Main CSV output; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest_out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Wasserstein (and optionally KL) distance between two distributions.
    #[command(allow_negative_numbers = true)]
    Distance(DistanceArgs),
    /// Radius estimate from the distance between two random halves of the contexts.
    #[command(allow_negative_numbers = true)]
    Radius(RadiusArgs),
    /// Robust policy evaluation.
    #[command(allow_negative_numbers = true)]
    Ope(OpeArgs),
    /// Robust policy learning by grid search or biased SGD.
    #[command(allow_negative_numbers = true)]
    Opl(OplArgs),
    /// KL versus Wasserstein bounds on a one-dimensional example.
    #[command(allow_negative_numbers = true)]
    Compare(CompareArgs),
    /// Monte-Carlo convergence-rate check of the estimator.
    #[command(allow_negative_numbers = true)]
    Rate(RateArgs),
    /// Generate synthetic train/test data with injected shift.
    #[command(allow_negative_numbers = true)]
    Synth(SynthArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Distance(_) => "distance",
            Command::Radius(_) => "radius",
            Command::Ope(_) => "ope",
            Command::Opl(_) => "opl",
            Command::Compare(_) => "compare",
            Command::Rate(_) => "rate",
            Command::Synth(_) => "synth",
            Command::Replay(_) => "replay",
        }
    }
}

/// Files a command read and wrote, for the manifest.
#[derive(Debug, Default)]
pub struct RunLog {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
}

impl RunLog {
    pub fn input(&mut self, p: &Path) {
        if !self.inputs.iter().any(|q| q == p) {
            self.inputs.push(p.to_path_buf());
        }
    }

    pub fn write(&mut self, p: &Path, contents: &str) -> Result<(), CliError> {
        std::fs::write(p, contents).map_err(|e| CliError::file(p, e))?;
        self.outputs.push(p.to_path_buf());
        Ok(())
    }
}

fn execute(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    let started = Instant::now();
    let mut log = RunLog::default();
    let csv = match &cli.command {
        Command::Distance(a) => commands::distance(a, &mut log)?,
        Command::Radius(a) => commands::radius(a, cli.seed, &mut log)?,
        Command::Ope(a) => commands::ope(a, &mut log)?,
        Command::Opl(a) => commands::opl(a, cli.seed, &mut log)?,
        Command::Compare(a) => commands::compare(a, &mut log)?,
        Command::Rate(a) => commands::rate(a, cli.seed, &mut log)?,
        Command::Synth(a) => commands::synth(a, cli.seed, &mut log)?,
        Command::Replay(a) => return replay(a, cli),
    };
    match &cli.out {
        Some(p) => log.write(p, &csv)?,
        None => std::io::stdout().write_all(csv.as_bytes()).map_err(|e| CliError::io(e.to_string()))?,
    }
    if let Some(path) = &cli.manifest_out {
        let cwd = std::env::current_dir().map_err(|e| CliError::io(e.to_string()))?;
        let m = RunManifest {
            command: cli.command.name().to_string(),
            argv: manifest::strip_manifest_flag(argv),
            cwd: cwd.display().to_string(),
            config: serde_json::to_value(cli)?,
            seed: log.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: manifest::digests(&log.inputs)?,
            outputs: manifest::digests(&log.outputs)?,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        manifest::write(path, &m)?;
    }
    eprintln!("{} finished in {:.3} s", cli.command.name(), started.elapsed().as_secs_f64());
    Ok(())
}

fn replay(args: &ReplayArgs, outer: &Cli) -> Result<(), CliError> {
    let m = manifest::read(&args.manifest)?;
    std::env::set_current_dir(&m.cwd).map_err(|e| CliError::io(format!("{}: {e}", m.cwd)))?;
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by version {}, replaying with {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    for input in &m.inputs {
        let now = manifest::sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::validation(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let mut argv = m.argv.clone();
    if let Some(p) = &outer.manifest_out {
        argv.push("--manifest-out".into());
        argv.push(p.display().to_string());
    }
    let cli = Cli::try_parse_from(std::iter::once("wdro".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::validation(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::validation("a manifest cannot replay another replay"));
    }
    execute(&cli, &argv)?;
    if !args.no_verify {
        for out in &m.outputs {
            let now = manifest::sha256_file(Path::new(&out.path))?;
            if now != out.sha256 {
                return Err(CliError::numerical(format!("output {} differs from the recorded run", out.path)));
            }
        }
        eprintln!("replay verified {} output file(s)", m.outputs.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(error::EXIT_VALIDATION as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(error::EXIT_VALIDATION as u8);
        }
    }
    match execute(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
