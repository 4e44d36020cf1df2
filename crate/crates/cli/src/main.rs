use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imuloc::eval::format_table;
use imuloc::pipeline::{reproduce_tables, run_ablation, ExperimentConfig, Knob, Runner, Stage, Tables, PRESETS};
use imuloc::{Error, Result};

/// CSI localization trained on IMU pseudo-labels: simulate, fit, train and evaluate.
#[derive(Parser)]
#[command(name = "imuloc", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment TOML file, or a preset name (desk, simulated, warehouse).
    #[arg(long, global = true, default_value = "desk")]
    config: String,
    /// Run a single seed.
    #[arg(long, global = true, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list: `0..30` or `1,4,9`. Defaults to the config's seeds.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Output root.
    #[arg(long, global = true, env = "IMULOC_OUT", default_value = "runs")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recompute every stage even if cached outputs match.
    #[arg(long, global = true)]
    no_cache: bool,
    /// Also compute missing upstream stages.
    #[arg(long, global = true)]
    chain: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectories, IMU readings, control points and channels.
    Simulate,
    /// CSI to features, and the train/test split.
    Preprocess,
    /// Forward-backward pseudo-labels.
    Fit,
    /// Supervised and dead-reckoning baselines, and k-NN.
    Train,
    /// Pseudo-label training with iterative refinement.
    Refine,
    /// Score every method and print the results table.
    Evaluate,
    /// Sweep one control-point or preprocessing knob.
    Ablate {
        /// cp_noise_sigma, cp_count, cp_radius or snr_threshold.
        #[arg(long)]
        knob: Knob,
    },
    /// Full chain for all seeds plus result tables under `<out>/tables`.
    ReproduceTables,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list `{s}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = if PRESETS.contains(&g.config.as_str()) && !Path::new(&g.config).exists() {
        ExperimentConfig::preset(&g.config)?
    } else {
        ExperimentConfig::load(Path::new(&g.config))?
    };
    if let Some(s) = g.seed {
        cfg.seeds = vec![s];
    } else if let Some(s) = &g.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(g)?;
    let use_cache = !g.no_cache;
    let stage = match &cli.cmd {
        Command::Simulate => Stage::Simulate,
        Command::Preprocess => Stage::Preprocess,
        Command::Fit => Stage::Fit,
        Command::Train => Stage::Train,
        Command::Refine => Stage::Refine,
        Command::Evaluate => Stage::Evaluate,
        Command::Ablate { knob } => {
            let (_, summary) = run_ablation(&cfg, *knob, &g.out, use_cache)?;
            println!("{:<14} {:>8} {:>13} {:>6} {:>9} {:>9} {:>9}", "knob", "value", "metric", "seeds", "median m", "q10 m", "q90 m");
            for r in summary {
                println!(
                    "{:<14} {:>8} {:>13} {:>6} {:>9.4} {:>9.4} {:>9.4}",
                    r.knob, r.value, r.metric, r.seeds, r.median, r.q10, r.q90
                );
            }
            return Ok(());
        }
        Command::ReproduceTables => {
            let runner = Runner::new(&cfg, &g.out, use_cache)?;
            let tables = reproduce_tables(&runner)?;
            print!("{}", tables.render());
            log::info!("{} stages executed", runner.executed());
            return Ok(());
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
    };
    let runner = Runner::new(&cfg, &g.out, use_cache)?;
    runner.run(&[stage], &cfg.seeds, g.chain)?;
    for r in runner.records() {
        log::info!("seed {} {}: {}", r.seed, r.stage, if r.executed { "executed" } else { "cached" });
    }
    if stage == Stage::Evaluate {
        let summaries = cfg.seeds.iter().map(|&s| runner.load_summary(s)).collect::<Result<Vec<_>>>()?;
        let tables = Tables::from_summaries(&cfg, &summaries)?;
        print!("{}", format_table(&tables.horizontal));
    }
    println!("{} stage(s) executed, outputs in {}", runner.executed(), g.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
