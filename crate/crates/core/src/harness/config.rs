//! Flat `key = value` experiment configuration.
//!
//! Keys are `section.name`; a `[section]` line sets the prefix for the keys
//! that follow it. `#` starts a comment. Every key has a default, so an
//! empty file describes the reference setup on synthetic data.
//!
//! ```text
//! [experiment]
//! display_sizes = 10, 25, 50, 100
//! strategies = dqn, double, dueling, popularity, popgini, random
//! seeds = 0, 1, 2
//!
//! [strategy]
//! w1 = 1.0
//! w2 = 1.0
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{AgentConfig, Variant};
use crate::dataset::SyntheticConfig;
use crate::environment::{EnvConfig, RewardMode};
use crate::error::{Error, Result};
use crate::mf::MfHyper;
use crate::strategies::{StrategyKind, Weights, DEFAULT_SMOOTHING};

/// A row of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategySpec {
    Agent(Variant),
    Heuristic(StrategyKind),
    Random,
}

impl StrategySpec {
    /// Every strategy in results-table order.
    pub fn all() -> Vec<StrategySpec> {
        use StrategyKind::*;
        let mut v: Vec<StrategySpec> = [Variant::Double, Variant::Dueling, Variant::Standard]
            .into_iter()
            .map(StrategySpec::Agent)
            .collect();
        v.extend(
            [Popularity, Gini, Entropy, Error, Variance, PopGini, PopEnt, PopError, PopVar]
                .into_iter()
                .map(StrategySpec::Heuristic),
        );
        v.push(StrategySpec::Random);
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategySpec::Agent(v) => v.name(),
            StrategySpec::Heuristic(k) => k.name(),
            StrategySpec::Random => "random",
        }
    }

    /// Row label used in the markdown tables.
    pub fn label(self) -> &'static str {
        match self {
            StrategySpec::Agent(Variant::Standard) => "Standard DQN",
            StrategySpec::Agent(Variant::Double) => "Double DQN",
            StrategySpec::Agent(Variant::Dueling) => "Dueling DQN",
            StrategySpec::Heuristic(StrategyKind::Popularity) => "Popularity strategy",
            StrategySpec::Heuristic(StrategyKind::Entropy) => "Entropy strategy",
            StrategySpec::Heuristic(StrategyKind::Gini) => "Gini strategy",
            StrategySpec::Heuristic(StrategyKind::Variance) => "Variance strategy",
            StrategySpec::Heuristic(StrategyKind::Error) => "Error strategy",
            StrategySpec::Heuristic(StrategyKind::PopEnt) => "PopEnt strategy",
            StrategySpec::Heuristic(StrategyKind::PopGini) => "PopGini strategy",
            StrategySpec::Heuristic(StrategyKind::PopVar) => "PopVar strategy",
            StrategySpec::Heuristic(StrategyKind::PopError) => "PopError strategy",
            StrategySpec::Random => "Random strategy",
        }
    }

    /// Stable numeric code used to derive per-cell random streams.
    pub fn code(self) -> u64 {
        match self {
            StrategySpec::Agent(v) => 1 + Variant::ALL.iter().position(|&x| x == v).unwrap() as u64,
            StrategySpec::Heuristic(k) => 10 + StrategyKind::ALL.iter().position(|&x| x == k).unwrap() as u64,
            StrategySpec::Random => 30,
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("random") {
            return Ok(StrategySpec::Random);
        }
        if let Ok(v) = s.parse::<Variant>() {
            return Ok(StrategySpec::Agent(v));
        }
        s.parse::<StrategyKind>().map(StrategySpec::Heuristic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticConfig),
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub synthetic: SyntheticConfig,
    pub cold_fraction: f64,
    /// Share of cold users used for training episodes; the rest are test users.
    pub train_fraction: f64,
    pub mf: MfHyper,
    pub full_retrain: bool,
    pub agent: AgentConfig,
    /// Share of all training steps over which epsilon decays.
    pub epsilon_decay_fraction: f64,
    pub env: EnvConfig,
    pub trace: bool,
    pub display_sizes: Vec<usize>,
    pub episodes: usize,
    pub strategies: Vec<StrategySpec>,
    pub weights: Weights,
    pub smoothing: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub per_user_samples: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synthetic = SyntheticConfig::default();
        Self {
            data: DataSource::Synthetic(synthetic.clone()),
            synthetic,
            cold_fraction: 0.25,
            train_fraction: 0.8,
            mf: MfHyper::default(),
            full_retrain: false,
            agent: AgentConfig::default(),
            epsilon_decay_fraction: 0.8,
            env: EnvConfig::default(),
            trace: false,
            display_sizes: vec![10, 25, 50, 100],
            episodes: 2000,
            strategies: StrategySpec::all(),
            weights: Weights::default(),
            smoothing: DEFAULT_SMOOTHING,
            seeds: vec![0],
            out: PathBuf::from("results"),
            per_user_samples: false,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Validation(format!("{key}: cannot parse `{s}`"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse `{v}`")))
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: n as u64 + 1,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            let k = k.trim();
            let key = if section.is_empty() || k.contains('.') {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            entries.insert(key, v.trim().to_string());
        }
        let mut cfg = ExperimentConfig::default();
        let mut data_path = None;
        for (key, v) in &entries {
            cfg.set(key, v, &mut data_path)?;
        }
        cfg.data = match data_path {
            Some(p) => DataSource::Csv(p),
            None => DataSource::Synthetic(cfg.synthetic.clone()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, data_path: &mut Option<PathBuf>) -> Result<()> {
        let b = |v: &str| parse_one::<bool>(key, v);
        match key {
            "data.path" => *data_path = Some(PathBuf::from(v)),
            "synthetic.num_users" => self.synthetic.num_users = parse_one(key, v)?,
            "synthetic.num_items" => self.synthetic.num_items = parse_one(key, v)?,
            "synthetic.num_clusters" => self.synthetic.num_clusters = parse_one(key, v)?,
            "synthetic.interactions_per_user" => self.synthetic.interactions_per_user = parse_one(key, v)?,
            "synthetic.noise_rate" => self.synthetic.noise_rate = parse_one(key, v)?,
            "synthetic.return_rate" => self.synthetic.return_rate = parse_one(key, v)?,
            "synthetic.popularity_skew" => self.synthetic.popularity_skew = parse_one(key, v)?,
            "split.cold_fraction" => self.cold_fraction = parse_one(key, v)?,
            "split.train_fraction" => self.train_fraction = parse_one(key, v)?,
            "mf.latent_factors" => self.mf.latent_factors = parse_one(key, v)?,
            "mf.learning_rate" => self.mf.learning_rate = parse_one(key, v)?,
            "mf.regularization" => self.mf.regularization = parse_one(key, v)?,
            "mf.iterations" => self.mf.iterations = parse_one(key, v)?,
            "mf.full_retrain" => self.full_retrain = b(v)?,
            "agent.gamma" => self.agent.gamma = parse_one(key, v)?,
            "agent.learning_rate" => self.agent.learning_rate = parse_one(key, v)?,
            "agent.batch_size" => self.agent.batch_size = parse_one(key, v)?,
            "agent.epsilon_start" => self.agent.epsilon_start = parse_one(key, v)?,
            "agent.epsilon_end" => self.agent.epsilon_end = parse_one(key, v)?,
            "agent.epsilon_decay_fraction" => self.epsilon_decay_fraction = parse_one(key, v)?,
            "agent.target_update_every" => self.agent.target_update_every = parse_one(key, v)?,
            "agent.buffer_capacity" => self.agent.buffer_capacity = parse_one(key, v)?,
            "agent.huber_delta" => self.agent.huber_delta = parse_one(key, v)?,
            "agent.hidden" => self.agent.hidden = parse_list(key, v)?,
            "agent.dueling_double_target" => self.agent.dueling_double_target = b(v)?,
            "env.pool_size" => self.env.pool_size = parse_one(key, v)?,
            "env.rmse_floor" => self.env.rmse_floor = parse_one(key, v)?,
            "env.fold_in_regularization" => self.env.fold_in_regularization = parse_one(key, v)?,
            "env.reward" => {
                self.env.reward = match v.trim() {
                    "per_step" => RewardMode::PerStep,
                    "terminal" => RewardMode::Terminal,
                    other => return Err(Error::Validation(format!("{key}: unknown reward mode `{other}`"))),
                }
            }
            "env.trace" => self.trace = b(v)?,
            "experiment.display_sizes" => self.display_sizes = parse_list(key, v)?,
            "experiment.episodes" => self.episodes = parse_one(key, v)?,
            "experiment.strategies" | "strategy" => self.strategies = parse_list(key, v)?,
            "experiment.seeds" => self.seeds = parse_list(key, v)?,
            "experiment.out" => self.out = PathBuf::from(v),
            "experiment.per_user_samples" => self.per_user_samples = b(v)?,
            "strategy.w1" | "w1" => self.weights.w1 = parse_one(key, v)?,
            "strategy.w2" | "w2" => self.weights.w2 = parse_one(key, v)?,
            "strategy.smoothing" => self.smoothing = parse_one(key, v)?,
            other => return Err(Error::Validation(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.display_sizes.is_empty() {
            return bad("display_sizes must not be empty".into());
        }
        if let Some(&k) = self.display_sizes.iter().find(|&&k| k == 0 || k > self.env.pool_size.min(200)) {
            return bad(format!("display size {k} must lie in 1..={}", self.env.pool_size.min(200)));
        }
        if self.episodes == 0 {
            return bad("episodes must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} must lie in (0, 1)", self.train_fraction));
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return bad(format!(
                "epsilon_decay_fraction {} must lie in (0, 1]",
                self.epsilon_decay_fraction
            ));
        }
        if !(self.weights.w1.is_finite() && self.weights.w2.is_finite()) {
            return bad("strategy weights must be finite".into());
        }
        self.mf.validate()?;
        self.agent.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    /// Agent settings for one display size, with the epsilon horizon resolved.
    pub fn agent_for(&self, variant: Variant, k: usize) -> AgentConfig {
        let total = (self.episodes * k) as f64;
        AgentConfig {
            variant,
            epsilon_decay_steps: ((self.epsilon_decay_fraction * total).round() as u64).max(1),
            ..self.agent.clone()
        }
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let s = &self.synthetic;
        let mut out = String::new();
        let mut section = |name: &str, rows: Vec<(&str, String)>| {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in rows {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        };
        if let DataSource::Csv(p) = &self.data {
            section("data", vec![("path", p.display().to_string())]);
        }
        section(
            "synthetic",
            vec![
                ("num_users", s.num_users.to_string()),
                ("num_items", s.num_items.to_string()),
                ("num_clusters", s.num_clusters.to_string()),
                ("interactions_per_user", s.interactions_per_user.to_string()),
                ("noise_rate", s.noise_rate.to_string()),
                ("return_rate", s.return_rate.to_string()),
                ("popularity_skew", s.popularity_skew.to_string()),
            ],
        );
        section(
            "split",
            vec![
                ("cold_fraction", self.cold_fraction.to_string()),
                ("train_fraction", self.train_fraction.to_string()),
            ],
        );
        section(
            "mf",
            vec![
                ("latent_factors", self.mf.latent_factors.to_string()),
                ("learning_rate", self.mf.learning_rate.to_string()),
                ("regularization", self.mf.regularization.to_string()),
                ("iterations", self.mf.iterations.to_string()),
                ("full_retrain", self.full_retrain.to_string()),
            ],
        );
        let a = &self.agent;
        section(
            "agent",
            vec![
                ("gamma", a.gamma.to_string()),
                ("learning_rate", a.learning_rate.to_string()),
                ("batch_size", a.batch_size.to_string()),
                ("epsilon_start", a.epsilon_start.to_string()),
                ("epsilon_end", a.epsilon_end.to_string()),
                ("epsilon_decay_fraction", self.epsilon_decay_fraction.to_string()),
                ("target_update_every", a.target_update_every.to_string()),
                ("buffer_capacity", a.buffer_capacity.to_string()),
                ("huber_delta", a.huber_delta.to_string()),
                ("hidden", join(&a.hidden)),
                ("dueling_double_target", a.dueling_double_target.to_string()),
            ],
        );
        section(
            "env",
            vec![
                ("pool_size", self.env.pool_size.to_string()),
                ("rmse_floor", self.env.rmse_floor.to_string()),
                ("fold_in_regularization", self.env.fold_in_regularization.to_string()),
                (
                    "reward",
                    match self.env.reward {
                        RewardMode::PerStep => "per_step".into(),
                        RewardMode::Terminal => "terminal".into(),
                    },
                ),
                ("trace", self.trace.to_string()),
            ],
        );
        section(
            "experiment",
            vec![
                ("display_sizes", join(&self.display_sizes)),
                ("episodes", self.episodes.to_string()),
                ("strategies", join(&self.strategies)),
                ("seeds", join(&self.seeds)),
                ("out", self.out.display().to_string()),
                ("per_user_samples", self.per_user_samples.to_string()),
            ],
        );
        section(
            "strategy",
            vec![
                ("w1", self.weights.w1.to_string()),
                ("w2", self.weights.w2.to_string()),
                ("smoothing", self.smoothing.to_string()),
            ],
        );
        out
    }
}
