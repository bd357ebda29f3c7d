use anyhow::Context;
use clap::{Parser, Subcommand};
use levylab_cli::config::ExperimentConfig;
use levylab_cli::experiments::{self, Status};
use levylab_cli::output::{to_json, write_file};
use levylab_cli::params::{AuditParams, Params};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "levylab",
    version,
    about = "Numerical experiments for Lévy-driven SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// List the built-in problems.
    Presets,
    /// Check the declared hypotheses of a config's problem.
    Audit { config: PathBuf },
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args([
            "-C",
            env!("CARGO_MANIFEST_DIR"),
            "describe",
            "--always",
            "--dirty",
        ])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os("LEVYLAB_OUTPUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output_dir.clone())
}

fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn run(path: &Path, threads: Option<usize>, seed_override: Option<u64>) -> anyhow::Result<Status> {
    let mut cfg = load(path)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("thread pool")?;
    }
    let dir = output_dir(&cfg);
    cfg.output_dir = dir.clone();
    let start = Instant::now();
    let out = experiments::run(&cfg)?;
    let wall = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir, "results.json", to_json(&out.results)?.as_bytes())?;
    for t in &out.tables {
        write_file(&dir, &t.name, &t.bytes)?;
    }
    let manifest = json!({
        "config": cfg,
        "git_describe": git_describe(),
        "seed": cfg.seed,
        "wall_time_seconds": wall,
        "threads": rayon::current_num_threads(),
        "version": env!("CARGO_PKG_VERSION"),
        "files": out.tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
    });
    write_file(&dir, "manifest.json", to_json(&manifest)?.as_bytes())?;
    print!(
        "{}",
        to_json(&json!({"output_dir": dir, "verdict": out.status}))?
    );
    Ok(out.status)
}

fn audit(path: &Path) -> anyhow::Result<Status> {
    let cfg = load(path)?;
    let p = cfg.build_problem()?;
    // audit-experiment configs may carry their own grid; otherwise defaults
    let prm = match Params::parse(cfg.experiment, &cfg.params) {
        Ok(Params::Audit(a)) => a,
        _ => AuditParams::default(),
    };
    let out = experiments::audit(&p, &prm)?;
    print!("{}", to_json(&out.results)?);
    Ok(out.status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            threads,
            seed_override,
        } => run(&config, threads, seed_override),
        Command::Presets => {
            for (name, desc) in levylab::presets::PRESETS {
                println!("{name:<22}{desc}");
            }
            Ok(Status::Pass)
        }
        Command::Audit { config } => audit(&config),
    };
    match result {
        Ok(Status::Fail) => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
