//! DQN, Double DQN and Dueling DQN agents over a masked discrete action set.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::environment::ShownMask;
use crate::error::{Error, Result};
use crate::neural::{huber_loss, Adam, Architecture, HeadKind, Mlp};
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Standard,
    Double,
    Dueling,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Standard, Variant::Double, Variant::Dueling];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "dqn",
            Variant::Double => "double",
            Variant::Dueling => "dueling",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dqn" | "standard" => Ok(Variant::Standard),
            "double" | "ddqn" => Ok(Variant::Double),
            "dueling" => Ok(Variant::Dueling),
            other => Err(Error::Validation(format!("unknown agent variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub variant: Variant,
    /// Use the Double DQN target with the dueling head.
    pub dueling_double_target: bool,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub target_update_every: u64,
    pub buffer_capacity: usize,
    pub huber_delta: f64,
    pub hidden: Vec<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Standard,
            dueling_double_target: false,
            gamma: 0.99,
            learning_rate: 4e-4,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            // 80% of 2000 episodes × 10 steps
            epsilon_decay_steps: 16_000,
            target_update_every: 100,
            buffer_capacity: 100,
            huber_delta: 1.0,
            hidden: vec![64, 32],
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be > 0", self.learning_rate));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_update_every == 0 {
            return bad("batch size, buffer capacity and target update period must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || self.epsilon_start < self.epsilon_end
        {
            return bad(format!(
                "epsilon schedule {} -> {} must be decreasing probabilities",
                self.epsilon_start, self.epsilon_end
            ));
        }
        if !(self.huber_delta > 0.0) {
            return bad(format!("huber delta {} must be > 0", self.huber_delta));
        }
        Ok(())
    }

    pub fn head(&self) -> HeadKind {
        match self.variant {
            Variant::Dueling => HeadKind::Dueling,
            _ => HeadKind::Standard,
        }
    }

    pub fn uses_double_target(&self) -> bool {
        self.variant == Variant::Double || (self.variant == Variant::Dueling && self.dueling_double_target)
    }

    pub fn architecture(&self, actions: usize) -> Architecture {
        Architecture {
            input: actions,
            hidden: self.hidden.clone(),
            actions,
            activation: crate::neural::Activation::Tanh,
            head: self.head(),
        }
    }
}

/// Linearly decayed exploration rate, constant after the decay horizon.
pub fn epsilon_at(config: &AgentConfig, step: u64) -> f64 {
    if step >= config.epsilon_decay_steps {
        return config.epsilon_end;
    }
    let frac = step as f64 / config.epsilon_decay_steps as f64;
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
}

/// Index of the largest `q` among unshown actions; ties go to the lowest index.
pub fn masked_argmax(q: &[f64], mask: &ShownMask) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (a, &v) in q.iter().enumerate() {
        if mask.is_shown(a) {
            continue;
        }
        if best.is_none_or(|b| v > q[b]) {
            best = Some(a);
        }
    }
    best
}

/// Epsilon-greedy choice among unshown actions.
pub fn select_action(q: &[f64], mask: &ShownMask, epsilon: f64, rng: &mut Rng) -> Result<usize> {
    let free = mask.len() - mask.count();
    if free == 0 {
        return Err(Error::NoAction);
    }
    if epsilon > 0.0 && rng.gen_bool(epsilon.min(1.0)) {
        let pick = rng.gen_range(0..free);
        return Ok(mask.free_indices().nth(pick).expect("pick < free"));
    }
    masked_argmax(q, mask).ok_or(Error::NoAction)
}

/// `r + γ max_{a' unshown} Q_target(s', a')`, or `r` at episode end.
pub fn td_target_standard(reward: f64, next_q_target: &[f64], done: bool, gamma: f64, next_mask: &ShownMask) -> f64 {
    if done {
        return reward;
    }
    match masked_argmax(next_q_target, next_mask) {
        Some(a) => reward + gamma * next_q_target[a],
        None => reward,
    }
}

/// `r + γ Q_target(s', argmax_{a' unshown} Q_online(s', a'))`, or `r` at episode end.
pub fn td_target_double(
    reward: f64,
    next_q_online: &[f64],
    next_q_target: &[f64],
    done: bool,
    gamma: f64,
    next_mask: &ShownMask,
) -> f64 {
    if done {
        return reward;
    }
    match masked_argmax(next_q_online, next_mask) {
        Some(a) => reward + gamma * next_q_target[a],
        None => reward,
    }
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: ShownMask,
    pub action: usize,
    pub reward: f64,
    pub next_state: ShownMask,
    pub done: bool,
}

/// Fixed-capacity FIFO experience replay.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts `t`, evicting the oldest record when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Transition> {
        (0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())].clone())
            .collect()
    }
}

/// Metadata stored next to an agent's network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub variant: Variant,
    pub env_steps: u64,
    pub epsilon: f64,
    pub config: AgentConfig,
}

/// A Q-learning agent owning its online and target networks.
#[derive(Debug, Clone)]
pub struct QAgent {
    config: AgentConfig,
    online: Mlp,
    target: Mlp,
    optimizer: Adam,
    buffer: ReplayBuffer,
    rng: Rng,
    env_steps: u64,
    syncs: u64,
    grads: Mlp,
}

impl QAgent {
    pub fn new(config: AgentConfig, actions: usize, seed: u64) -> Result<Self> {
        Self::with_architecture(config.clone(), &config.architecture(actions), seed)
    }

    /// Builds an agent around an explicit network shape.
    pub fn with_architecture(config: AgentConfig, arch: &Architecture, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed, 0xa6e7);
        let online = Mlp::new(arch, &mut rng);
        Ok(Self {
            target: online.clone(),
            optimizer: Adam::new(&online, config.learning_rate),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            grads: online.zeros_like(),
            online,
            rng,
            env_steps: 0,
            syncs: 0,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(&self.config, self.env_steps)
    }

    pub fn q_values(&self, state: &ShownMask) -> Result<Vec<f64>> {
        self.online.forward(&state.as_input())
    }

    /// Epsilon-greedy action under the current schedule.
    pub fn act(&mut self, state: &ShownMask) -> Result<usize> {
        let q = self.q_values(state)?;
        let eps = self.epsilon();
        select_action(&q, state, eps, &mut self.rng)
    }

    /// Greedy action; never explores.
    pub fn greedy(&self, state: &ShownMask) -> Result<usize> {
        masked_argmax(&self.q_values(state)?, state).ok_or(Error::NoAction)
    }

    fn target_for(&self, t: &Transition) -> Result<f64> {
        if t.done {
            return Ok(t.reward);
        }
        let next = t.next_state.as_input();
        let next_target = self.target.forward(&next)?;
        Ok(if self.config.uses_double_target() {
            let next_online = self.online.forward(&next)?;
            td_target_double(t.reward, &next_online, &next_target, false, self.config.gamma, &t.next_state)
        } else {
            td_target_standard(t.reward, &next_target, false, self.config.gamma, &t.next_state)
        })
    }

    /// One gradient step on the mean Huber TD loss of `batch`. The target
    /// network is not touched.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Validation("empty training batch".into()));
        }
        self.grads.fill_zero();
        let n = batch.len() as f64;
        let mut total = 0.0;
        for t in batch {
            let y = self.target_for(t)?;
            let trace = self.online.forward_trace(&t.state.as_input())?;
            let (loss, dloss) = huber_loss(trace.q()[t.action], y, self.config.huber_delta);
            if !loss.is_finite() {
                return Err(Error::Diverged { loss });
            }
            total += loss;
            self.online.accumulate_gradient(&trace, t.action, dloss / n, &mut self.grads)?;
        }
        let mean = total / n;
        if !mean.is_finite() {
            return Err(Error::Diverged { loss: mean });
        }
        self.optimizer.step(&mut self.online, &self.grads)?;
        Ok(mean)
    }

    /// Hard-copies online into target when `step` is a positive multiple of
    /// the update period.
    pub fn maybe_sync_target(&mut self, step: u64) -> bool {
        if step > 0 && step % self.config.target_update_every == 0 {
            self.target.copy_from(&self.online);
            self.syncs += 1;
            true
        } else {
            false
        }
    }

    /// Records one environment step, trains once the buffer holds a full
    /// batch, and syncs the target on schedule. Returns the loss if trained.
    pub fn observe(&mut self, t: Transition) -> Result<Option<f64>> {
        self.buffer.push(t);
        self.env_steps += 1;
        let loss = if self.buffer.len() >= self.config.batch_size {
            let batch = self.buffer.sample(self.config.batch_size, &mut self.rng);
            Some(self.train_step(&batch)?)
        } else {
            None
        };
        self.maybe_sync_target(self.env_steps);
        Ok(loss)
    }

    pub fn meta(&self) -> AgentMeta {
        AgentMeta {
            variant: self.config.variant,
            env_steps: self.env_steps,
            epsilon: self.epsilon(),
            config: self.config.clone(),
        }
    }

    /// Writes `<stem>.qnet` (online network) and `<stem>.json` (metadata).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let net = dir.join(format!("{stem}.qnet"));
        std::fs::write(&net, self.online.to_bytes()).map_err(|e| Error::io(&net, e))?;
        let meta = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&self.meta()).expect("metadata serializes");
        std::fs::write(&meta, json).map_err(|e| Error::io(&meta, e))
    }

    /// Restores an agent for evaluation; replay and optimizer state start fresh.
    pub fn load(dir: &Path, stem: &str, seed: u64) -> Result<Self> {
        let net_path = dir.join(format!("{stem}.qnet"));
        let bytes = std::fs::read(&net_path).map_err(|e| Error::io(&net_path, e))?;
        let online = Mlp::from_bytes(&bytes)?;
        let meta_path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: AgentMeta =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", meta_path.display())))?;
        let mut agent = Self::with_architecture(meta.config, online.architecture(), seed)?;
        agent.target = online.clone();
        agent.online = online;
        agent.env_steps = meta.env_steps;
        Ok(agent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;

    fn mask(n: usize, shown: &[usize]) -> ShownMask {
        let mut m = ShownMask::new(n);
        for &a in shown {
            m.show(a);
        }
        m
    }

    #[test]
    fn greedy_respects_mask_and_ties() {
        let mut rng = seeded_rng(0, 0);
        assert_eq!(select_action(&[0.5, 0.9, 0.1], &mask(3, &[1]), 0.0, &mut rng).unwrap(), 0);
        assert_eq!(select_action(&[0.2; 4], &mask(4, &[0]), 0.0, &mut rng).unwrap(), 1);
        assert!(matches!(
            select_action(&[0.0; 2], &mask(2, &[0, 1]), 0.5, &mut rng),
            Err(Error::NoAction)
        ));
    }

    #[test]
    fn full_exploration_is_uniform_over_free_actions() {
        let mut rng = seeded_rng(1, 0);
        let m = mask(6, &[0, 3]);
        let q = [9.0, 0.0, 0.0, 9.0, 0.0, 5.0];
        let mut counts = [0f64; 6];
        let draws = 20_000;
        for _ in 0..draws {
            counts[select_action(&q, &m, 1.0, &mut rng).unwrap()] += 1.0;
        }
        assert_eq!(counts[0] + counts[3], 0.0);
        let e = draws as f64 / 4.0;
        let chi2: f64 = [1, 2, 4, 5].iter().map(|&a| (counts[a] - e).powi(2) / e).sum();
        assert!(chi2 < 16.27, "chi2 {chi2}"); // 3 dof, 0.999
    }

    #[test]
    fn target_examples() {
        let none = mask(2, &[]);
        assert_eq!(td_target_standard(0.7, &[5.0, 6.0], true, 0.99, &none), 0.7);
        assert!((td_target_standard(0.5, &[0.3, 0.7], false, 0.99, &none) - 1.193).abs() < 1e-12);
        assert_eq!(td_target_standard(0.5, &[0.3, 0.7], false, 0.0, &none), 0.5);
        assert!((td_target_double(0.5, &[1.0, 2.0], &[0.3, 0.7], false, 0.99, &none) - 1.193).abs() < 1e-12);
        assert!((td_target_double(0.5, &[2.0, 1.0], &[0.3, 0.7], false, 0.99, &none) - (0.5 + 0.99 * 0.3)).abs() < 1e-12);
        // shown items are excluded from the max
        assert!((td_target_standard(0.0, &[0.3, 0.7], false, 1.0 - 1e-9, &mask(2, &[1])) - 0.3).abs() < 1e-8);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig {
            epsilon_decay_steps: 1000,
            ..AgentConfig::default()
        };
        assert_eq!(epsilon_at(&cfg, 0), 1.0);
        assert!((epsilon_at(&cfg, 500) - 0.505).abs() < 1e-12);
        assert_eq!(epsilon_at(&cfg, 1000), 0.01);
        assert_eq!(epsilon_at(&cfg, 5000), 0.01);
    }

    fn transition(n: usize, action: usize, reward: f64) -> Transition {
        let state = mask(n, &[]);
        let mut next_state = state.clone();
        next_state.show(action);
        Transition {
            state,
            action,
            reward,
            next_state,
            done: false,
        }
    }

    #[test]
    fn replay_is_fifo() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(transition(5, i, i as f64));
        }
        let rewards: Vec<f64> = buf.ordered().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sync_schedule() {
        let mut agent = QAgent::new(AgentConfig::default(), 8, 0).unwrap();
        for step in 1..100 {
            assert!(!agent.maybe_sync_target(step));
        }
        assert!(agent.maybe_sync_target(100));
        let s = mask(8, &[2]);
        assert_eq!(agent.online.forward(&s.as_input()).unwrap(), agent.target.forward(&s.as_input()).unwrap());
        let before = agent.target.clone();
        assert!(agent.maybe_sync_target(200));
        assert_eq!(agent.target, before);
    }

    #[test]
    fn fixed_point_batch_leaves_params() {
        let cfg = AgentConfig {
            gamma: 0.0,
            ..AgentConfig::default()
        };
        let mut agent = QAgent::new(cfg, 6, 3).unwrap();
        let t = transition(6, 2, 0.0);
        let q = agent.q_values(&t.state).unwrap()[2];
        let t = Transition { reward: q, ..t };
        let before = agent.online.clone();
        let loss = agent.train_step(&[t]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(agent.online, before);
    }

    #[test]
    fn linear_update_moves_toward_target() {
        let arch = Architecture {
            input: 4,
            hidden: vec![],
            actions: 4,
            activation: Activation::Identity,
            head: HeadKind::Standard,
        };
        let cfg = AgentConfig {
            gamma: 0.0,
            learning_rate: 0.01,
            ..AgentConfig::default()
        };
        for reward in [-2.0, 2.0] {
            let mut agent = QAgent::with_architecture(cfg.clone(), &arch, 4).unwrap();
            let mut t = transition(4, 1, reward);
            t.state.show(3);
            let before = agent.q_values(&t.state).unwrap()[1];
            agent.train_step(&[t.clone()]).unwrap();
            let after = agent.q_values(&t.state).unwrap()[1];
            // first Adam step moves each touched parameter by lr against the gradient sign:
            // the bias and the weight on the single active input both shift by 0.01
            let expected = before + 0.02 * (reward - before).signum();
            assert!((after - expected).abs() < 1e-6, "{before} -> {after}");
        }
    }

    #[test]
    fn observe_trains_once_batch_available() {
        let cfg = AgentConfig {
            batch_size: 4,
            ..AgentConfig::default()
        };
        let mut agent = QAgent::new(cfg, 5, 0).unwrap();
        for i in 0..3 {
            assert!(agent.observe(transition(5, i, 1.0)).unwrap().is_none());
        }
        assert!(agent.observe(transition(5, 3, 1.0)).unwrap().is_some());
        assert_eq!(agent.env_steps(), 4);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = AgentConfig {
            variant: Variant::Dueling,
            ..AgentConfig::default()
        };
        let agent = QAgent::new(cfg, 7, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        agent.save(dir.path(), "a").unwrap();
        let back = QAgent::load(dir.path(), "a", 0).unwrap();
        assert_eq!(back.online, agent.online);
        assert_eq!(back.config, agent.config);
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
}
