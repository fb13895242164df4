//! The cold-user interview as an episodic MDP.
//!
//! The action set is the pool of the most popular warm items. The state is
//! the binary vector of pool items already shown. Each step reveals the
//! user's logged reaction to the shown item, re-estimates the user's latent
//! vector from everything revealed so far and scores the result by RMSE on a
//! held-out validation half of the user's interactions.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agent::QAgent;
use crate::dataset::{popularity_ranking, ColdUser, Dataset, Signal};
use crate::error::{Error, Result};
use crate::mf::{fold_in_user, observations, rmse, FactorModel, MfHyper, Observation};
use crate::seeded_rng;
use crate::strategies::random_strategy;

/// Which pool items have been shown.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShownMask(Vec<bool>);

impl ShownMask {
    pub fn new(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_shown(&self, a: usize) -> bool {
        self.0[a]
    }

    pub fn show(&mut self, a: usize) {
        self.0[a] = true;
    }

    /// Number of shown items.
    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn free_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i)
    }

    /// Network input: 1.0 for shown items, 0.0 otherwise.
    pub fn as_input(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardMode {
    /// `1 / RMSE` after every step.
    PerStep,
    /// Zero until the last step, then `1 / RMSE`.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub pool_size: usize,
    pub rmse_floor: f64,
    pub reward: RewardMode,
    pub fold_in_regularization: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            pool_size: 200,
            rmse_floor: 1e-3,
            reward: RewardMode::PerStep,
            fold_in_regularization: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Retrain {
    warm: Arc<Vec<Observation>>,
    hyper: MfHyper,
}

/// Shared, read-only interview environment.
#[derive(Debug, Clone)]
pub struct InterviewEnv {
    pool: Vec<u32>,
    model: Arc<FactorModel>,
    k: usize,
    cfg: EnvConfig,
    retrain: Option<Retrain>,
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub action: usize,
    pub item: u32,
    pub signal: i8,
    pub rmse: f64,
    pub reward: f64,
}

/// Per-episode state for one cold user.
#[derive(Debug, Clone)]
pub struct Episode {
    user: u32,
    shown: ShownMask,
    revealed: Vec<(u32, Signal)>,
    steps: usize,
    reveal_source: HashMap<u32, Signal>,
    validation: Vec<(u32, Signal)>,
    user_vector: Vec<f64>,
    retrained: Option<FactorModel>,
    rmse: f64,
    trace: Vec<TraceRecord>,
    seed: u64,
}

impl Episode {
    pub fn user(&self) -> u32 {
        self.user
    }

    pub fn shown(&self) -> &ShownMask {
        &self.shown
    }

    pub fn revealed(&self) -> &[(u32, Signal)] {
        &self.revealed
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn validation(&self) -> &[(u32, Signal)] {
        &self.validation
    }

    /// Items the environment may reveal.
    pub fn reveal_source(&self) -> &HashMap<u32, Signal> {
        &self.reveal_source
    }

    pub fn user_vector(&self) -> &[f64] {
        &self.user_vector
    }

    /// Validation RMSE after the latest step (or at reset).
    pub fn rmse(&self) -> f64 {
        self.rmse
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub signal: Signal,
    pub rmse: f64,
}

impl InterviewEnv {
    /// Environment whose pool is the `cfg.pool_size` most popular items of `warm`.
    pub fn new(model: Arc<FactorModel>, warm: &Dataset, k: usize, cfg: EnvConfig) -> Result<Self> {
        let ranking = popularity_ranking(warm);
        if ranking.len() < cfg.pool_size {
            log::warn!(
                "only {} items available; action pool shrinks from {}",
                ranking.len(),
                cfg.pool_size
            );
        }
        let pool = ranking.into_iter().take(cfg.pool_size).collect();
        Self::with_pool(model, pool, k, cfg)
    }

    pub fn with_pool(model: Arc<FactorModel>, pool: Vec<u32>, k: usize, cfg: EnvConfig) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Validation("empty action pool".into()));
        }
        if k == 0 || k > pool.len() {
            return Err(Error::Validation(format!(
                "display size {k} must lie in 1..={}",
                pool.len()
            )));
        }
        for &i in &pool {
            model.item_vector(i)?;
        }
        if !(cfg.rmse_floor > 0.0) {
            return Err(Error::Validation("rmse_floor must be > 0".into()));
        }
        Ok(Self {
            pool,
            model,
            k,
            cfg,
            retrain: None,
        })
    }

    /// Re-trains the whole factor model on warm data plus the revealed
    /// feedback at every step instead of folding in the user vector.
    pub fn with_full_retrain(mut self, warm: &Dataset, hyper: MfHyper) -> Self {
        self.retrain = Some(Retrain {
            warm: Arc::new(observations(warm)),
            hyper,
        });
        self
    }

    pub fn pool(&self) -> &[u32] {
        &self.pool
    }

    pub fn actions(&self) -> usize {
        self.pool.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    /// Same environment with another episode length.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        let mut env = Self::with_pool(self.model.clone(), self.pool.clone(), k, self.cfg.clone())?;
        env.retrain = self.retrain.clone();
        Ok(env)
    }

    /// Starts an episode, splitting the user's hidden interactions 50/50
    /// (seeded) into a reveal source and a validation half.
    pub fn reset(&self, user: &ColdUser, seed: u64) -> Result<Episode> {
        if user.hidden.len() < 2 {
            return Err(Error::SkipUser {
                user: user.user,
                hidden: user.hidden.len(),
            });
        }
        let mut hidden = user.hidden.clone();
        hidden.shuffle(&mut seeded_rng(seed, 0xe9));
        let validation = hidden.split_off(hidden.len() / 2);
        let mut ep = Episode {
            user: user.user,
            shown: ShownMask::new(self.pool.len()),
            revealed: Vec::with_capacity(self.k),
            steps: 0,
            reveal_source: hidden.into_iter().collect(),
            validation,
            user_vector: vec![0.0; self.model.dim()],
            retrained: None,
            rmse: 0.0,
            trace: Vec::new(),
            seed,
        };
        ep.rmse = self.validation_rmse(&ep)?;
        Ok(ep)
    }

    fn validation_rmse(&self, ep: &Episode) -> Result<f64> {
        let model = ep.retrained.as_ref().unwrap_or(&self.model);
        let preds = ep
            .validation
            .iter()
            .map(|&(i, _)| model.predict_for(&ep.user_vector, i))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<f64> = ep.validation.iter().map(|(_, s)| s.value()).collect();
        rmse(&preds, &truth)
    }

    fn update_user(&self, ep: &mut Episode) -> Result<()> {
        match &self.retrain {
            None => {
                ep.user_vector = fold_in_user(&self.model, &ep.revealed, self.cfg.fold_in_regularization)?;
            }
            Some(rt) => {
                let mut obs: Vec<Observation> = rt.warm.as_ref().clone();
                obs.extend(ep.revealed.iter().map(|&(i, s)| (ep.user, i, s.value())));
                let mut model = self.model.as_ref().clone();
                let mut rng = seeded_rng(ep.seed, 0x7e00 + ep.steps as u64);
                model.fit(&obs, &rt.hyper, &mut rng)?;
                ep.user_vector = model.user_vector(ep.user)?.to_vec();
                ep.retrained = Some(model);
            }
        }
        Ok(())
    }

    /// Shows pool item `action`, reveals the user's signal for it and scores
    /// the updated user model.
    pub fn step(&self, ep: &mut Episode, action: usize) -> Result<StepOutcome> {
        if ep.steps >= self.k {
            return Err(Error::Contract("step after episode end".into()));
        }
        if action >= self.pool.len() {
            return Err(Error::Index {
                what: "action",
                index: action,
                len: self.pool.len(),
            });
        }
        if ep.shown.is_shown(action) {
            return Err(Error::Contract(format!("pool item {action} already shown")));
        }
        let item = self.pool[action];
        ep.shown.show(action);
        ep.steps += 1;
        let signal = ep.reveal_source.get(&item).copied().unwrap_or(Signal::Absent);
        ep.revealed.push((item, signal));
        self.update_user(ep)?;
        ep.rmse = self.validation_rmse(ep)?;

        let done = ep.steps == self.k;
        let reciprocal = 1.0 / ep.rmse.max(self.cfg.rmse_floor);
        let reward = match self.cfg.reward {
            RewardMode::PerStep => reciprocal,
            RewardMode::Terminal if done => reciprocal,
            RewardMode::Terminal => 0.0,
        };
        ep.trace.push(TraceRecord {
            step: ep.steps,
            action,
            item,
            signal: signal.as_i8(),
            rmse: ep.rmse,
            reward,
        });
        Ok(StepOutcome {
            reward,
            done,
            signal,
            rmse: ep.rmse,
        })
    }
}

/// Seed of a user's episode, so every policy sees the same validation split.
pub fn episode_seed(base: u64, user: u32) -> u64 {
    base ^ (user as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Source of the items shown during evaluation.
#[derive(Debug)]
pub enum Policy<'a> {
    /// Fixed ordered pool indices, shared by every user.
    Ranked(Vec<usize>),
    /// Fresh uniform draw of pool indices per user.
    Random { seed: u64 },
    /// Greedy actions of a trained agent.
    Greedy(&'a QAgent),
}

/// Runs one greedy episode per eligible user and returns each user's final
/// validation RMSE. Users with fewer than two hidden interactions are skipped.
pub fn evaluate_strategy(env: &InterviewEnv, users: &[ColdUser], policy: &Policy<'_>, seed: u64) -> Result<Vec<f64>> {
    Ok(run_episodes(env, users, policy, seed)?.into_iter().map(|ep| ep.rmse).collect())
}

/// Like [`evaluate_strategy`] but returns the finished episodes.
pub fn run_episodes(env: &InterviewEnv, users: &[ColdUser], policy: &Policy<'_>, seed: u64) -> Result<Vec<Episode>> {
    if let Policy::Ranked(list) = policy {
        if list.len() < env.k() {
            return Err(Error::Validation(format!(
                "ranked list of {} items is shorter than k = {}",
                list.len(),
                env.k()
            )));
        }
    }
    let all: Vec<u32> = (0..env.actions() as u32).collect();
    let mut out = Vec::new();
    for user in users {
        let mut ep = match env.reset(user, episode_seed(seed, user.user)) {
            Ok(ep) => ep,
            Err(Error::SkipUser { .. }) => continue,
            Err(e) => return Err(e),
        };
        let random_list = match policy {
            Policy::Random { seed } => Some(random_strategy(&all, env.k(), episode_seed(*seed, user.user))?),
            _ => None,
        };
        for t in 0..env.k() {
            let action = match policy {
                Policy::Ranked(list) => list[t],
                Policy::Random { .. } => random_list.as_ref().expect("drawn above")[t] as usize,
                Policy::Greedy(agent) => agent.greedy(ep.shown())?,
            };
            env.step(&mut ep, action)?;
        }
        out.push(ep);
    }
    if out.is_empty() {
        return Err(Error::Validation("no eligible cold users to evaluate".into()));
    }
    Ok(out)
}
