use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bex::harness::{self, RunConfig};
use bex::{selftest, Error, Result};

#[derive(Parser)]
#[command(name = "bex", about = "Bounded exploration for soft actor-critic on toy control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed; each lands in <out>/seed-<seed>.
    Train {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        algo: Option<String>,
        /// Overrides the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Candidates per step (N).
        #[arg(long = "candidates", short = 'N')]
        candidates: Option<usize>,
        /// Gibbs draws per step (S).
        #[arg(long = "reductions", short = 'S')]
        reductions: Option<usize>,
        /// Ensemble members (M).
        #[arg(long = "members", short = 'M')]
        members: Option<usize>,
        /// Value-expansion horizon (H).
        #[arg(long = "horizon", short = 'H')]
        horizon: Option<usize>,
        /// Update rounds per environment step (G).
        #[arg(long = "updates-per-step", short = 'G')]
        updates_per_step: Option<usize>,
        /// Selector temperature.
        #[arg(long)]
        temperature: Option<f64>,
        /// Also write per-step selector diagnostics to selections.csv.
        #[arg(long, short = 'v')]
        verbose: bool,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Aggregate finished run directories into curves and a final-score table.
    Aggregate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "aggregate")]
        out: PathBuf,
    },
    /// Write smoothed curve CSV and SVG plots from an aggregate directory.
    Plot {
        aggregate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn train_config(command: &Command) -> Result<RunConfig> {
    let Command::Train {
        env,
        algo,
        seed,
        steps,
        config,
        candidates,
        reductions,
        members,
        horizon,
        updates_per_step,
        temperature,
        verbose,
        set,
        ..
    } = command
    else {
        unreachable!("train_config on a non-train command")
    };
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut add = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    };
    add("env", env.clone());
    add("algo", algo.clone());
    add("seeds", seed.map(|s| s.to_string()));
    add("steps", steps.map(|s| s.to_string()));
    add("candidates", candidates.map(|s| s.to_string()));
    add("reductions", reductions.map(|s| s.to_string()));
    add("members", members.map(|s| s.to_string()));
    add("horizon", horizon.map(|s| s.to_string()));
    add("updates_per_step", updates_per_step.map(|s| s.to_string()));
    add("selector_temperature", temperature.map(|s| s.to_string()));
    add("log_selection", verbose.then(|| "true".to_string()));
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    for (k, v) in overrides {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        cmd @ Command::Train { out, .. } => {
            let cfg = train_config(cmd)?;
            for &seed in &cfg.seeds {
                let dir = out.join(format!("seed-{seed}"));
                let summary = harness::run(&cfg, seed, &dir)?;
                let last = summary.rows.last().map_or("no evaluations".to_string(), |r| {
                    format!("last eval {:.2} at step {}", r.eval_mean, r.step)
                });
                println!(
                    "{} {} seed {seed}: {last}; {} update rounds, {} warmup skips -> {}",
                    cfg.algo,
                    cfg.env,
                    summary.update_rounds,
                    summary.warmup_skips,
                    dir.display()
                );
            }
            Ok(())
        }
        Command::Aggregate { dirs, out } => {
            let agg = harness::aggregate_dirs(dirs)?;
            harness::write_aggregate(&agg, out)?;
            print!("{}", harness::aggregate::score_table(&agg.scores));
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Plot { aggregate, out, window } => {
            let out = out.clone().unwrap_or_else(|| aggregate.join("plots"));
            match harness::plot(aggregate, &out, *window)? {
                Some(a) => println!("wrote {} and {} plot(s)", a.csv.display(), a.svgs.len()),
                None => println!("aggregate is empty; nothing to plot"),
            }
            Ok(())
        }
        Command::Selftest => {
            let report = selftest::run_all();
            for line in &report {
                println!("{line}");
            }
            if !report.iter().all(|l| l.passed) {
                eprintln!("selftest failed");
                std::process::exit(1);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
