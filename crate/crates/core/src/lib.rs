//! Cold-user recommendation testbed.
//!
//! A latent-factor model is trained on warm users. Cold users are then
//! interviewed: at each step a policy shows one of the most popular items,
//! the user's logged reaction is revealed, the user's latent vector is
//! re-estimated and the validation RMSE is measured. Policies are either
//! non-personalized active-learning rankings ([`strategies`]) or Q-learning
//! agents ([`agent`]) trained on the reciprocal-RMSE reward.
//!
//! Module map:
//!
//! * [`dataset`]: interaction loading, synthetic generation, cold/warm split
//! * [`mf`]: SGD matrix factorization, ridge fold-in, RMSE
//! * [`strategies`]: the nine active-learning item scores plus a random baseline
//! * [`neural`]: small MLP with standard/dueling heads, Huber loss, Adam
//! * [`agent`]: DQN, Double DQN and Dueling DQN with replay and target sync
//! * [`environment`]: the interview MDP
//! * [`harness`]: configuration, training and evaluation sweeps, t-tests, tables

pub mod agent;
pub mod dataset;
pub mod environment;
pub mod error;
pub mod harness;
pub mod mf;
pub mod neural;
pub mod strategies;

pub use error::{Error, Result};

/// Deterministic RNG used everywhere in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds a seeded RNG on an independent stream.
///
/// Distinct `stream` values with the same `seed` give statistically
/// independent sequences, so experiment cells never share randomness.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
