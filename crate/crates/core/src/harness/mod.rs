//! Experiment orchestration: data preparation, agent training, evaluation
//! sweeps and table emission.
//!
//! A sweep is a grid of independent jobs, one per (seed, strategy, display
//! size). Each seed first gets its own data split and MF model; jobs then
//! run in parallel on a pool capped by `COLDSTART_RL_THREADS`.

pub mod config;
pub mod results;
pub mod stats;
pub mod tables;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{DataSource, ExperimentConfig, StrategySpec};
pub use results::{Cell, CellRecord, CellsFile, ResultsTable};
pub use stats::{t_test_matrix, PValueGrid};
pub use tables::{emit_tables, Manifest};

use crate::agent::{QAgent, Transition, Variant};
use crate::dataset::{generate_synthetic, load_interactions, split_cold_warm, ColdUser, Dataset, SplitResult};
use crate::environment::{episode_seed, evaluate_strategy, run_episodes, InterviewEnv, Policy};
use crate::error::{Error, Result};
use crate::mf::{train_mf, FactorModel};
use crate::strategies::{rank_items, AlStrategy, ItemStats};
use crate::seeded_rng;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "COLDSTART_RL_THREADS";

/// Worker pool sized by [`THREADS_ENV`], defaulting to all cores.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))
}

/// Everything shared by the jobs of one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub split: SplitResult,
    pub model: Arc<FactorModel>,
    pub train_users: Vec<ColdUser>,
    pub test_users: Vec<ColdUser>,
    pub stats: ItemStats,
    /// Environment at the largest display size; use [`InterviewEnv::with_k`].
    pub env: InterviewEnv,
}

pub fn load_data(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &config.data {
        DataSource::Csv(path) => load_interactions(path),
        DataSource::Synthetic(s) => generate_synthetic(s, seed),
    }
}

/// Seeded split of cold users into training-episode users and test users.
pub fn split_train_test(cold: &[ColdUser], train_fraction: f64, seed: u64) -> Result<(Vec<ColdUser>, Vec<ColdUser>)> {
    if cold.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least two cold users for a train/test split, got {}",
            cold.len()
        )));
    }
    let mut users = cold.to_vec();
    users.shuffle(&mut seeded_rng(seed, 0x7a1));
    let n_train = ((train_fraction * users.len() as f64).round() as usize).clamp(1, users.len() - 1);
    let test = users.split_off(n_train);
    Ok((users, test))
}

pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let data = load_data(config, seed)?;
    let split = split_cold_warm(&data, config.cold_fraction, seed)?;
    let model = Arc::new(train_mf(&split.warm, &config.mf, seed)?);
    let (train_users, test_users) = split_train_test(&split.cold_users, config.train_fraction, seed)?;
    let stats = ItemStats::from_dataset(&split.warm, config.smoothing)?;
    let k_max = *config.display_sizes.iter().max().expect("validated non-empty");
    let mut env = InterviewEnv::new(model.clone(), &split.warm, k_max, config.env.clone())?;
    if config.full_retrain {
        env = env.with_full_retrain(&split.warm, config.mf.clone());
    }
    Ok(Prepared {
        seed,
        split,
        model,
        train_users,
        test_users,
        stats,
        env,
    })
}

/// Independent seed for one grid cell.
pub fn cell_seed(seed: u64, spec: StrategySpec, k: usize) -> u64 {
    seeded_rng(seed, (spec.code() << 32) | k as u64).next_u64()
}

/// Seed shared by every strategy of one experiment seed, so all of them see
/// the same per-user validation splits.
pub fn evaluation_seed(seed: u64) -> u64 {
    seeded_rng(seed, 0xe7a1).next_u64()
}

pub fn agent_stem(variant: Variant, k: usize, seed: u64) -> String {
    format!("{}_k{k}_s{seed}", variant.name())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub user: u32,
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    pub final_rmse: f64,
    pub epsilon: f64,
    /// Mean training loss over the episode's train steps.
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub episodes: usize,
    pub env_steps: u64,
    pub syncs: u64,
    pub curve: Vec<CurvePoint>,
}

impl TrainingReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("episode,user,return,final_rmse,epsilon,mean_loss\n");
        for p in &self.curve {
            let loss = p.mean_loss.map_or_else(|| "NA".into(), |l| format!("{l:.6}"));
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{loss}\n",
                p.episode, p.user, p.episode_return, p.final_rmse, p.epsilon
            ));
        }
        out
    }
}

/// Trains one agent for `config.episodes` episodes over the training cold
/// users, cycling through them in a fresh shuffled order each pass.
pub fn run_training(
    config: &ExperimentConfig,
    prep: &Prepared,
    variant: Variant,
    k: usize,
) -> Result<(QAgent, TrainingReport)> {
    let env = prep.env.with_k(k)?;
    let seed = cell_seed(prep.seed, StrategySpec::Agent(variant), k);
    let mut agent = QAgent::new(config.agent_for(variant, k), env.actions(), seed)?;
    let users: Vec<&ColdUser> = prep.train_users.iter().filter(|u| u.hidden.len() >= 2).collect();
    if users.is_empty() {
        return Err(Error::Validation("no training cold user has two or more hidden interactions".into()));
    }
    let mut order_rng = seeded_rng(seed, 0x0de);
    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        if order.is_empty() {
            order = (0..users.len()).collect();
            order.shuffle(&mut order_rng);
            order.reverse();
        }
        let user = users[order.pop().expect("refilled above")];
        let in_episode = |e: Error| Error::InEpisode {
            episode,
            source: Box::new(e),
        };
        let mut ep = env
            .reset(user, episode_seed(seed.wrapping_add(episode as u64), user.user))
            .map_err(in_episode)?;
        let (mut ret, mut loss_sum, mut losses) = (0.0, 0.0, 0usize);
        loop {
            let state = ep.shown().clone();
            let action = agent.act(&state).map_err(in_episode)?;
            let out = env.step(&mut ep, action).map_err(in_episode)?;
            ret += out.reward;
            let t = Transition {
                state,
                action,
                reward: out.reward,
                next_state: ep.shown().clone(),
                done: out.done,
            };
            if let Some(l) = agent.observe(t).map_err(in_episode)? {
                loss_sum += l;
                losses += 1;
            }
            if out.done {
                break;
            }
        }
        curve.push(CurvePoint {
            episode,
            user: user.user,
            episode_return: ret,
            final_rmse: ep.rmse(),
            epsilon: agent.epsilon(),
            mean_loss: (losses > 0).then(|| loss_sum / losses as f64),
        });
    }
    let report = TrainingReport {
        episodes: config.episodes,
        env_steps: agent.env_steps(),
        syncs: agent.syncs(),
        curve,
    };
    Ok((agent, report))
}

/// Trains and persists an agent under `out/agents` and its curve under
/// `out/curves`.
pub fn train_and_save(
    config: &ExperimentConfig,
    prep: &Prepared,
    variant: Variant,
    k: usize,
) -> Result<(QAgent, TrainingReport)> {
    let (agent, report) = run_training(config, prep, variant, k)?;
    let stem = agent_stem(variant, k, prep.seed);
    let agents = config.out.join("agents");
    let curves = config.out.join("curves");
    for d in [&agents, &curves] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    agent.save(&agents, &stem)?;
    let path = curves.join(format!("{stem}.csv"));
    std::fs::write(&path, report.curve_csv()).map_err(|e| Error::io(&path, e))?;
    Ok((agent, report))
}

/// Fixed pool-index order for a heuristic strategy.
pub fn heuristic_policy(config: &ExperimentConfig, prep: &Prepared, env: &InterviewEnv, kind: crate::strategies::StrategyKind) -> Result<Policy<'static>> {
    let strategy = AlStrategy::with_weights(kind, config.weights.w1, config.weights.w2);
    let items = rank_items(&strategy, &prep.stats, env.pool(), env.k())?;
    let index: std::collections::HashMap<u32, usize> = env.pool().iter().enumerate().map(|(a, &i)| (i, a)).collect();
    Ok(Policy::Ranked(items.iter().map(|i| index[i]).collect()))
}

/// How agent cells obtain their network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentSource {
    /// Train now and save the checkpoint.
    Train,
    /// Load `out/agents/<stem>`; a missing checkpoint makes the cell missing.
    Load,
}

/// Evaluates one cell on the seed's test users and returns per-user RMSEs.
pub fn evaluate_cell(
    config: &ExperimentConfig,
    prep: &Prepared,
    spec: StrategySpec,
    k: usize,
    source: AgentSource,
) -> Result<Vec<f64>> {
    let env = prep.env.with_k(k)?;
    let eval_seed = evaluation_seed(prep.seed);
    let agent;
    let policy = match spec {
        StrategySpec::Heuristic(kind) => heuristic_policy(config, prep, &env, kind)?,
        StrategySpec::Random => Policy::Random {
            seed: cell_seed(prep.seed, spec, k),
        },
        StrategySpec::Agent(variant) => {
            agent = match source {
                AgentSource::Train => train_and_save(config, prep, variant, k)?.0,
                AgentSource::Load => QAgent::load(
                    &config.out.join("agents"),
                    &agent_stem(variant, k, prep.seed),
                    cell_seed(prep.seed, spec, k),
                )?,
            };
            Policy::Greedy(&agent)
        }
    };
    if config.trace {
        let episodes = run_episodes(&env, &prep.test_users, &policy, eval_seed)?;
        let dir = config.out.join("traces");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{}_k{k}_s{}.jsonl", spec.name(), prep.seed));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        for ep in &episodes {
            for rec in ep.trace() {
                let line = serde_json::json!({ "user": ep.user(), "record": rec });
                writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
            }
        }
        f.flush().map_err(|e| Error::io(&path, e))?;
        return Ok(episodes.iter().map(|e| e.rmse()).collect());
    }
    evaluate_strategy(&env, &prep.test_users, &policy, eval_seed)
}

/// Prepares every seed in parallel.
pub fn prepare_all(config: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Vec<Prepared>> {
    pool.install(|| config.seeds.par_iter().map(|&s| prepare(config, s)).collect())
}

/// Runs every (seed, strategy, display size) cell. Failing cells are kept as
/// records without RMSEs so the rest of the grid still completes.
pub fn run_grid(config: &ExperimentConfig, source: AgentSource) -> Result<Vec<CellRecord>> {
    let pool = thread_pool()?;
    let preps = prepare_all(config, &pool)?;
    let jobs: Vec<(&Prepared, StrategySpec, usize)> = preps
        .iter()
        .flat_map(|p| {
            config
                .strategies
                .iter()
                .flat_map(move |&s| config.display_sizes.iter().map(move |&k| (p, s, k)))
        })
        .collect();
    let records = pool.install(|| {
        jobs.par_iter()
            .map(|&(prep, spec, k)| {
                let outcome = evaluate_cell(config, prep, spec, k, source);
                if let Err(e) = &outcome {
                    log::warn!("cell {spec} k={k} seed={} failed: {e}", prep.seed);
                }
                CellRecord {
                    strategy: spec.name().to_string(),
                    k,
                    seed: prep.seed,
                    error: outcome.as_ref().err().map(|e| e.to_string()),
                    rmse: outcome.ok(),
                }
            })
            .collect()
    });
    Ok(records)
}

/// Assembles the results table from cell records.
pub fn run_evaluation(config: &ExperimentConfig, source: AgentSource) -> Result<(ResultsTable, Vec<CellRecord>)> {
    let records = run_grid(config, source)?;
    Ok((ResultsTable::from_records(&config.strategies, &config.display_sizes, &records), records))
}

pub fn cells_file(config: &ExperimentConfig, records: Vec<CellRecord>) -> CellsFile {
    CellsFile {
        strategies: config.strategies.iter().map(|s| s.name().to_string()).collect(),
        display_sizes: config.display_sizes.clone(),
        seeds: config.seeds.clone(),
        cells: records,
    }
}

/// Rebuilds tables from a stored `cells.json` and writes them into `dir`.
pub fn report(cells: &CellsFile, per_user: bool, dir: &Path) -> Result<(ResultsTable, PValueGrid)> {
    let strategies = cells
        .strategies
        .iter()
        .map(|s| s.parse::<StrategySpec>())
        .collect::<Result<Vec<_>>>()?;
    let results = ResultsTable::from_records(&strategies, &cells.display_sizes, &cells.cells);
    let grid = t_test_matrix(&results, per_user);
    emit_tables(&results, &grid, dir, None)?;
    Ok((results, grid))
}

/// Files written by [`sweep`].
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub results: ResultsTable,
    pub grid: PValueGrid,
    pub dir: PathBuf,
}

/// Full grid: trains agents, evaluates every cell, writes `cells.json`,
/// the tables and the manifest into `config.out`.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    let started = Instant::now();
    let started_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let dir = config.out.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (results, records) = run_evaluation(config, AgentSource::Train)?;
    let cells = cells_file(config, records);
    let path = dir.join("cells.json");
    let json = serde_json::to_string_pretty(&cells).expect("cells serialize");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let grid = t_test_matrix(&results, config.per_user_samples);
    let manifest = Manifest {
        config: config.to_text(),
        seeds: config.seeds.clone(),
        git: tables::git_describe(),
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    emit_tables(&results, &grid, &dir, Some(&manifest))?;
    Ok(SweepOutput { results, grid, dir })
}

/// Reads a config file; a `manifest.json` is accepted and its stored config
/// text is used.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let cfg = v
            .get("config")
            .and_then(|c| c.as_str())
            .ok_or_else(|| Error::Validation(format!("{}: no `config` string", path.display())))?;
        return ExperimentConfig::parse(cfg);
    }
    ExperimentConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SyntheticConfig;
    use crate::strategies::StrategyKind;

    fn small_config(out: &Path) -> ExperimentConfig {
        let text = format!(
            "[synthetic]\nnum_users = 120\nnum_items = 60\nnum_clusters = 2\ninteractions_per_user = 12\n\
             [mf]\niterations = 20\nlearning_rate = 0.01\n\
             [env]\npool_size = 40\n\
             [experiment]\ndisplay_sizes = 3, 5\nepisodes = 4\nseeds = 0\nstrategies = double, popularity, random\nout = {}\n",
            out.display()
        );
        ExperimentConfig::parse(&text).unwrap()
    }

    #[test]
    fn train_test_split_is_disjoint_and_seeded() {
        let cold: Vec<ColdUser> = (0..10)
            .map(|u| ColdUser {
                user: u,
                hidden: vec![],
            })
            .collect();
        let (a, b) = split_train_test(&cold, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert!(a.iter().all(|u| !b.contains(u)));
        assert_eq!(split_train_test(&cold, 0.8, 3).unwrap().0, a);
        assert!(split_train_test(&cold[..1], 0.8, 0).is_err());
    }

    #[test]
    fn one_episode_runs_k_steps() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.episodes = 1;
        let prep = prepare(&cfg, 0).unwrap();
        let (agent, report) = run_training(&cfg, &prep, Variant::Double, 5).unwrap();
        assert_eq!(report.env_steps, 5);
        assert_eq!(agent.env_steps(), 5);
        assert_eq!(report.curve.len(), 1);
    }

    #[test]
    fn step_and_sync_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.episodes = 60;
        let prep = prepare(&cfg, 0).unwrap();
        let (_, report) = run_training(&cfg, &prep, Variant::Standard, 5).unwrap();
        assert_eq!(report.env_steps, 300);
        assert_eq!(report.syncs, 3);
    }

    #[test]
    fn training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let prep = prepare(&cfg, 0).unwrap();
        let (a, ra) = run_training(&cfg, &prep, Variant::Dueling, 3).unwrap();
        let (b, rb) = run_training(&cfg, &prep, Variant::Dueling, 3).unwrap();
        assert_eq!(a.online().to_bytes(), b.online().to_bytes());
        assert_eq!(ra, rb);
    }

    #[test]
    fn heuristic_lists_are_prefixes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let prep = prepare(&cfg, 0).unwrap();
        let list = |k| match heuristic_policy(&cfg, &prep, &prep.env.with_k(k).unwrap(), StrategyKind::PopGini).unwrap() {
            Policy::Ranked(v) => v,
            _ => unreachable!(),
        };
        let (short, long) = (list(3), list(5));
        assert_eq!(&long[..3], &short[..]);
    }

    #[test]
    fn missing_checkpoint_gives_missing_cell() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let (table, records) = run_evaluation(&cfg, AgentSource::Load).unwrap();
        assert!(table.cell(0, 0).is_none());
        assert!(records.iter().any(|r| r.strategy == "double" && r.error.is_some()));
        assert!(table.cell(1, 0).is_some());
        assert_eq!(table.cells.len(), 3);
        assert_eq!(table.cells[0].len(), 2);
    }

    #[test]
    fn synthetic_source_follows_config() {
        let cfg = ExperimentConfig::parse("synthetic.num_users = 50\nsynthetic.num_items = 80").unwrap();
        let DataSource::Synthetic(s) = &cfg.data else { panic!() };
        assert_eq!(
            s,
            &SyntheticConfig {
                num_users: 50,
                num_items: 80,
                ..SyntheticConfig::default()
            }
        );
        assert_eq!(load_data(&cfg, 1).unwrap().num_users(), 50);
    }
}
