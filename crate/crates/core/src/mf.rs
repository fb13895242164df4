//! Latent-factor model `r̂_ui = p_u · q_i` trained by plain SGD on the
//! regularized squared error over observed interactions.
//!
//! # Checkpoint layout
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic      4 bytes  "CSMF"
//! version    u32      1
//! d          u32
//! num_users  u64
//! num_items  u64
//! users      num_users * d f64, row-major
//! items      num_items * d f64, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Interaction, Signal};
use crate::error::{Error, Result};
use crate::{seeded_rng, Rng};

const MAGIC: &[u8; 4] = b"CSMF";
const VERSION: u32 = 1;
const INIT_RANGE: f64 = 0.05;

/// MF hyperparameters. Defaults: 10 factors, learning rate 0.001,
/// regularization 0.01, 100 passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfHyper {
    pub latent_factors: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub iterations: usize,
}

impl Default for MfHyper {
    fn default() -> Self {
        Self {
            latent_factors: 10,
            learning_rate: 0.001,
            regularization: 0.01,
            iterations: 100,
        }
    }
}

impl MfHyper {
    pub fn validate(&self) -> Result<()> {
        if self.latent_factors == 0 {
            return Err(Error::Validation("latent_factors must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::Validation(format!(
                "regularization {} must be >= 0",
                self.regularization
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// User and item factor matrices, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    d: usize,
    num_users: usize,
    num_items: usize,
    users: Vec<f64>,
    items: Vec<f64>,
}

/// A training target: `(user, item, value)`.
pub type Observation = (u32, u32, f64);

impl FactorModel {
    pub fn from_parts(d: usize, users: Vec<f64>, items: Vec<f64>) -> Result<Self> {
        if d == 0 || users.len() % d != 0 || items.len() % d != 0 {
            return Err(Error::Validation(format!(
                "factor buffers ({}, {}) are not multiples of d = {d}",
                users.len(),
                items.len()
            )));
        }
        if users.iter().chain(&items).any(|v| !v.is_finite()) {
            return Err(Error::Validation("factor entries must be finite".into()));
        }
        Ok(Self {
            d,
            num_users: users.len() / d,
            num_items: items.len() / d,
            users,
            items,
        })
    }

    /// Uniform initialization in `[-0.05, 0.05]`.
    pub fn initialize(num_users: usize, num_items: usize, d: usize, rng: &mut Rng) -> Self {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect() };
        let users = draw(num_users * d);
        let items = draw(num_items * d);
        Self {
            d,
            num_users,
            num_items,
            users,
            items,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn user_vector(&self, user: u32) -> Result<&[f64]> {
        let u = check(user, self.num_users, "user")?;
        Ok(&self.users[u * self.d..(u + 1) * self.d])
    }

    pub fn item_vector(&self, item: u32) -> Result<&[f64]> {
        let i = check(item, self.num_items, "item")?;
        Ok(&self.items[i * self.d..(i + 1) * self.d])
    }

    /// Replaces one user's factors, e.g. with a folded-in vector.
    pub fn set_user_vector(&mut self, user: u32, v: &[f64]) -> Result<()> {
        let u = check(user, self.num_users, "user")?;
        if v.len() != self.d {
            return Err(Error::Contract(format!("user vector has {} entries, expected {}", v.len(), self.d)));
        }
        self.users[u * self.d..(u + 1) * self.d].copy_from_slice(v);
        Ok(())
    }

    /// Clamped prediction for an arbitrary user vector.
    pub fn predict_for(&self, user_vec: &[f64], item: u32) -> Result<f64> {
        Ok(clamp_score(dot(user_vec, self.item_vector(item)?)))
    }

    /// Regularized squared error over `obs`.
    pub fn loss(&self, obs: &[Observation], regularization: f64) -> f64 {
        obs.iter()
            .map(|&(u, i, r)| {
                let p = &self.users[u as usize * self.d..(u as usize + 1) * self.d];
                let q = &self.items[i as usize * self.d..(i as usize + 1) * self.d];
                let e = r - dot(p, q);
                e * e + regularization * (dot(p, p) + dot(q, q))
            })
            .sum()
    }

    /// One SGD pass over `obs` in the given order.
    fn sgd_pass(&mut self, obs: &[Observation], order: &[usize], lr: f64, reg: f64) {
        let d = self.d;
        for &k in order {
            let (u, i, r) = obs[k];
            let (u, i) = (u as usize, i as usize);
            let p = &mut self.users[u * d..(u + 1) * d];
            let q = &mut self.items[i * d..(i + 1) * d];
            let e = r - dot(p, q);
            for f in 0..d {
                let (pf, qf) = (p[f], q[f]);
                p[f] += lr * (e * qf - reg * pf);
                q[f] += lr * (e * pf - reg * qf);
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.users.iter().chain(&self.items).all(|v| v.is_finite())
    }

    /// Runs `hyper.iterations` shuffled SGD passes starting from the current factors.
    pub fn fit(&mut self, obs: &[Observation], hyper: &MfHyper, rng: &mut Rng) -> Result<()> {
        hyper.validate()?;
        let mut order: Vec<usize> = (0..obs.len()).collect();
        for pass in 0..hyper.iterations {
            order.shuffle(rng);
            self.sgd_pass(obs, &order, hyper.learning_rate, hyper.regularization);
            if !self.is_finite() {
                return Err(Error::TrainingDiverged { pass });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(28 + 8 * (self.users.len() + self.items.len()));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.num_users as u64).to_le_bytes());
        buf.extend_from_slice(&(self.num_items as u64).to_le_bytes());
        for v in self.users.iter().chain(&self.items) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        if buf.len() < 28 || &buf[..4] != MAGIC {
            return Err(Error::Checkpoint("not an MF checkpoint".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        if u32_at(4) != VERSION {
            return Err(Error::Checkpoint(format!("unsupported MF checkpoint version {}", u32_at(4))));
        }
        let d = u32_at(8) as usize;
        let (nu, ni) = (u64_at(12) as usize, u64_at(20) as usize);
        let expected = 28 + 8 * d * (nu + ni);
        if buf.len() != expected {
            return Err(Error::Checkpoint(format!("expected {expected} bytes, found {}", buf.len())));
        }
        let floats: Vec<f64> = buf[28..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (users, items) = floats.split_at(nu * d);
        Self::from_parts(d, users.to_vec(), items.to_vec())
    }
}

fn check(idx: u32, len: usize, what: &'static str) -> Result<usize> {
    if (idx as usize) < len {
        Ok(idx as usize)
    } else {
        Err(Error::Index {
            what,
            index: idx as usize,
            len,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clamps a raw score to the signal range `[-1, 1]`.
pub fn clamp_score(s: f64) -> f64 {
    s.clamp(-1.0, 1.0)
}

pub fn observations(data: &Dataset) -> Vec<Observation> {
    data.interactions()
        .iter()
        .map(|it| (it.user, it.item, it.signal.value()))
        .collect()
}

/// Trains a factor model on the observed interactions of `data`.
pub fn train_mf(data: &Dataset, hyper: &MfHyper, seed: u64) -> Result<FactorModel> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seeded_rng(seed, 0x3f);
    let mut model = FactorModel::initialize(data.num_users(), data.num_items(), hyper.latent_factors, &mut rng);
    model.fit(&observations(data), hyper, &mut rng)?;
    Ok(model)
}

/// Clamped prediction `p_u · q_i`.
pub fn predict(model: &FactorModel, user: u32, item: u32) -> Result<f64> {
    Ok(clamp_score(dot(model.user_vector(user)?, model.item_vector(item)?)))
}

/// Ridge estimate of a user vector against fixed item factors:
/// `argmin_p Σ (r - p·q_i)² + λ‖p‖²`.
pub fn fold_in_user(model: &FactorModel, revealed: &[(u32, Signal)], regularization: f64) -> Result<Vec<f64>> {
    let d = model.dim();
    if revealed.is_empty() {
        return Ok(vec![0.0; d]);
    }
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for &(item, signal) in revealed {
        let q = DVector::from_column_slice(model.item_vector(item)?);
        a.ger(1.0, &q, &q, 1.0);
        b.axpy(signal.value(), &q, 1.0);
    }
    for k in 0..d {
        a[(k, k)] += regularization;
    }
    let chol = a.cholesky().ok_or(Error::SingularSystem)?;
    let p = chol.solve(&b);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(p.iter().copied().collect())
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Validation("RMSE of an empty set".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            predictions.len(),
            truth.len()
        )));
    }
    let sse: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// RMSE of clamped model predictions over `test`.
pub fn mf_rmse(model: &FactorModel, test: &[Interaction]) -> Result<f64> {
    let preds = test
        .iter()
        .map(|it| predict(model, it.user, it.item))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = test.iter().map(|it| it.signal.value()).collect();
    rmse(&preds, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};

    fn model(users: &[&[f64]], items: &[&[f64]]) -> FactorModel {
        FactorModel::from_parts(users[0].len(), users.concat(), items.concat()).unwrap()
    }

    fn dense_positive(users: usize, items: usize) -> Dataset {
        generate_synthetic(
            &SyntheticConfig {
                num_users: users,
                num_items: items,
                num_clusters: 1,
                interactions_per_user: items,
                noise_rate: 0.0,
                return_rate: 0.0,
                popularity_skew: 0.0,
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn predict_examples() {
        let m = model(&[&[1.0, 0.0], &[0.0, 0.0], &[2.0, 0.0]], &[&[1.0, 0.0], &[0.3, -0.7]]);
        assert_eq!(predict(&m, 0, 0).unwrap(), 1.0);
        assert_eq!(predict(&m, 1, 1).unwrap(), 0.0);
        assert_eq!(predict(&m, 2, 0).unwrap(), 1.0);
        assert!(matches!(predict(&m, 3, 0), Err(Error::Index { .. })));
        assert!(matches!(predict(&m, 0, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn predict_is_symmetric_in_factors() {
        let a = [0.3, -0.2, 0.1];
        let b = [0.5, 0.4, -0.9];
        let m1 = model(&[&a], &[&b]);
        let m2 = model(&[&b], &[&a]);
        assert_eq!(predict(&m1, 0, 0).unwrap(), predict(&m2, 0, 0).unwrap());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, -1.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert!((rmse(&[1.0, 0.0], &[1.0, -1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[0.0, 0.0, 0.0], &[1.0, -1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(rmse(&[], &[]), Err(Error::Validation(_))));
    }

    #[test]
    fn mf_rmse_uses_clamped_predictions() {
        let m = model(&[&[3.0]], &[&[1.0], &[0.0]]);
        let test = [
            Interaction::new(0, 0, Signal::Purchase),
            Interaction::new(0, 1, Signal::Return),
        ];
        assert!((mf_rmse(&m, &test).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(mf_rmse(&m, &[]).is_err());
    }

    #[test]
    fn fit_constant_matrix() {
        let data = dense_positive(500, 50);
        let hyper = MfHyper {
            latent_factors: 2,
            ..MfHyper::default()
        };
        let m = train_mf(&data, &hyper, 7).unwrap();
        let rmse = mf_rmse(&m, data.interactions()).unwrap();
        assert!(rmse < 0.05, "training RMSE {rmse}");
    }

    #[test]
    fn training_decreases_loss_and_is_deterministic() {
        let data = generate_synthetic(&SyntheticConfig {
            num_users: 80,
            num_items: 40,
            num_clusters: 2,
            interactions_per_user: 8,
            ..SyntheticConfig::default()
        }, 1)
        .unwrap();
        let hyper = MfHyper::default();
        let obs = observations(&data);
        let mut rng = seeded_rng(3, 0x3f);
        let mut m = FactorModel::initialize(data.num_users(), data.num_items(), hyper.latent_factors, &mut rng);
        let initial = m.loss(&obs, hyper.regularization);
        m.fit(&obs, &hyper, &mut rng).unwrap();
        assert!(m.loss(&obs, hyper.regularization) < initial);

        let a = train_mf(&data, &hyper, 11).unwrap();
        let b = train_mf(&data, &hyper, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_rejects_bad_hyper() {
        let data = dense_positive(4, 3);
        let zero = MfHyper {
            iterations: 0,
            ..MfHyper::default()
        };
        assert!(matches!(train_mf(&data, &zero, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let data = dense_positive(20, 20);
        let hyper = MfHyper {
            learning_rate: 1e3,
            ..MfHyper::default()
        };
        assert!(matches!(train_mf(&data, &hyper, 0), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn fold_in_examples() {
        let m = model(&[&[0.0, 0.0]], &[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        assert_eq!(fold_in_user(&m, &[], 0.01).unwrap(), vec![0.0, 0.0]);

        let p = fold_in_user(&m, &[(0, Signal::Purchase)], 0.01).unwrap();
        assert!((p[0] - 1.0 / 1.01).abs() < 1e-12 && p[1].abs() < 1e-15);

        // orthogonal items decouple into two 1-D problems
        let p = fold_in_user(&m, &[(0, Signal::Purchase), (1, Signal::Return)], 0.01).unwrap();
        assert!((p[0] - 1.0 / 1.01).abs() < 1e-12);
        assert!((p[1] + 1.0 / 1.01).abs() < 1e-12);

        assert!(matches!(
            fold_in_user(&m, &[(0, Signal::Purchase)], 0.0),
            Err(Error::SingularSystem)
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(&[&[0.1, -0.2], &[1.5, 2.5]], &[&[3.0, 4.0]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mf.bin");
        m.save(&path).unwrap();
        assert_eq!(FactorModel::load(&path).unwrap(), m);
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(FactorModel::load(&path), Err(Error::Checkpoint(_))));
    }
}
