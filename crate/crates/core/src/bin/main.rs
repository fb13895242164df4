use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use coldstart_rl::agent::Variant;
use coldstart_rl::environment::RewardMode;
use coldstart_rl::harness::{self, AgentSource, DataSource, ExperimentConfig, StrategySpec};

#[derive(Parser)]
#[command(name = "coldstart-rl", version, about = "Cold-user preference elicitation with DQN agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and save its checkpoint and training curve.
    Train(Common),
    /// Evaluate strategies, loading agents saved by `train` or `sweep`.
    Evaluate(Common),
    /// Train and evaluate the full grid and write all tables.
    Sweep(Common),
    /// Write the configured synthetic dataset as CSV.
    Synth(Common),
    /// Rebuild tables from the `cells.json` of a previous run.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value`) or a `manifest.json` from an earlier sweep.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long = "display-size")]
    display_size: Option<usize>,
    /// Strategy name, or a comma-separated list.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "full-retrain")]
    full_retrain: bool,
    #[arg(long = "terminal-reward")]
    terminal_reward: bool,
    #[arg(long = "per-user-samples")]
    per_user_samples: bool,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => harness::read_config(p).with_context(|| format!("reading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(k) = self.display_size {
            cfg.display_sizes = vec![k];
        }
        if let Some(list) = &self.strategy {
            cfg.strategies = list
                .split(',')
                .map(|s| s.parse::<StrategySpec>())
                .collect::<Result<_, _>>()?;
        }
        if let Some(v) = self.variant {
            cfg.strategies = vec![StrategySpec::Agent(v)];
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.full_retrain |= self.full_retrain;
        cfg.per_user_samples |= self.per_user_samples;
        if self.terminal_reward {
            cfg.env.reward = RewardMode::Terminal;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_cells(cfg: &ExperimentConfig, records: Vec<harness::CellRecord>) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("cells.json");
    let json = serde_json::to_string_pretty(&harness::cells_file(cfg, records))?;
    std::fs::write(&path, json + "\n")?;
    Ok(path)
}

fn print_table(dir: &Path) -> anyhow::Result<()> {
    print!("{}", std::fs::read_to_string(dir.join("rmse.md"))?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.config()?;
            let Some(variant) = c.variant else {
                bail!("train needs --variant {{dqn,double,dueling}}");
            };
            let pool = harness::thread_pool()?;
            let preps = harness::prepare_all(&cfg, &pool)?;
            for prep in &preps {
                for &k in &cfg.display_sizes {
                    let (_, report) = harness::train_and_save(&cfg, prep, variant, k)?;
                    let last = report.curve.last().expect("at least one episode");
                    println!(
                        "{} k={k} seed={}: {} episodes, {} steps, {} target syncs, final epsilon {:.3}, last episode RMSE {:.4}",
                        variant,
                        prep.seed,
                        report.episodes,
                        report.env_steps,
                        report.syncs,
                        last.epsilon,
                        last.final_rmse
                    );
                }
            }
            println!("checkpoints in {}", cfg.out.join("agents").display());
        }
        Command::Evaluate(c) => {
            let cfg = c.config()?;
            let (results, records) = harness::run_evaluation(&cfg, AgentSource::Load)?;
            for r in records.iter().filter(|r| r.error.is_some()) {
                log::warn!("{} k={} seed={}: {}", r.strategy, r.k, r.seed, r.error.as_deref().unwrap_or(""));
            }
            write_cells(&cfg, records)?;
            let grid = harness::t_test_matrix(&results, cfg.per_user_samples);
            harness::emit_tables(&results, &grid, &cfg.out, None)?;
            print_table(&cfg.out)?;
        }
        Command::Sweep(c) => {
            let cfg = c.config()?;
            let out = harness::sweep(&cfg)?;
            print_table(&out.dir)?;
            println!("\ntables written to {}", out.dir.display());
        }
        Command::Synth(c) => {
            let cfg = c.config()?;
            if matches!(cfg.data, DataSource::Csv(_)) {
                bail!("synth needs a synthetic data source, not data.path");
            }
            let seed = cfg.seeds[0];
            let data = harness::load_data(&cfg, seed)?;
            let path = match &c.out {
                Some(p) if p.extension().is_some_and(|e| e == "csv") => p.clone(),
                Some(p) => {
                    std::fs::create_dir_all(p)?;
                    p.join(format!("synthetic_s{seed}.csv"))
                }
                None => PathBuf::from(format!("synthetic_s{seed}.csv")),
            };
            data.write_csv(&path)?;
            println!(
                "{} interactions over {} users and {} items written to {}",
                data.len(),
                data.num_users(),
                data.num_items(),
                path.display()
            );
        }
        Command::Report(c) => {
            let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            let cells = harness::CellsFile::read(&dir.join("cells.json"))?;
            harness::report(&cells, c.per_user_samples, &dir)?;
            print_table(&dir)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
