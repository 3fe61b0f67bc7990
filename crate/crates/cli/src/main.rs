mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use experiments::{write_summary, ExperimentRegistry, RunContext};

#[derive(Parser)]
#[command(name = "she-ergo", version, about = "Stochastic heat equation ergodicity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in a config file.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> anyhow::Result<(ExperimentConfig, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let text = String::from_utf8(bytes).context("config is not UTF-8")?;
    let cfg = ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((cfg, hash))
}

fn validate(path: &Path) -> anyhow::Result<ExitCode> {
    let (cfg, _) = load(path)?;
    let findings = cfg.findings(&ExperimentRegistry::builtin());
    if findings.is_empty() {
        println!("ok: no findings");
    } else {
        for f in &findings {
            println!("{f}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(path: &Path, seed: Option<u64>, output_dir: Option<PathBuf>, workers: Option<usize>, quiet: bool) -> anyhow::Result<ExitCode> {
    let (mut cfg, hash) = load(path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if output_dir.is_some() {
        cfg.output_dir = output_dir;
    }
    let registry = ExperimentRegistry::builtin();
    let findings = cfg.findings(&registry);
    if !findings.is_empty() {
        eprintln!("invalid configuration:");
        for f in &findings {
            eprintln!("  {f}");
        }
        return Ok(ExitCode::from(2));
    }
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let name = cfg.experiment.clone().expect("validated");
    let experiment = registry.get(&name).expect("validated");
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&name));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let seed = cfg.seed.expect("validated");
    let ctx = RunContext::new(&cfg, seed, hash, out.clone(), quiet);
    ctx.progress(&format!("{name}: seed {seed}, writing to {}", out.display()));
    let checks = experiment.run(&ctx)?;
    let passed = write_summary(&ctx, &name, path, &checks)?;
    if !quiet {
        for c in &checks {
            eprintln!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.criterion);
        }
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, seed, output_dir, workers, quiet } => run(&config, seed, output_dir, workers, quiet),
        Command::Validate { config } => validate(&config),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
