use std::collections::{BTreeSet, HashMap};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PopularityTable;
use crate::corpus::{ItemId, Session, UserHistory};
use crate::error::{Error, Result};
use crate::metrics::{Recommender, UserSession};
use crate::numerics::{sigmoid, DenseArray};

#[derive(Clone, Debug, PartialEq)]
pub struct BprConfig {
    pub factors: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    /// Negative samples drawn per observed event per epoch.
    pub negatives: usize,
    pub epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            factors: 40,
            learning_rate: 0.05,
            regularization: 0.002,
            negatives: 10,
            epochs: 10,
            init_scale: 0.1,
            seed: 7,
        }
    }
}

/// Matrix factorization model: `score(u, i) = bias_i + <p_u, q_i>`.
#[derive(Clone, Debug)]
pub struct MfFactors {
    pub users: DenseArray<f64>,
    pub items: DenseArray<f64>,
    pub biases: Vec<f64>,
    pub user_index: HashMap<String, usize>,
    pub config: BprConfig,
}

impl MfFactors {
    pub fn num_items(&self) -> usize {
        self.biases.len()
    }

    pub fn score(&self, user: usize, item: ItemId) -> f64 {
        let c = item.class();
        self.biases[c] + dot(self.users.row(user), self.items.row(c))
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite() && self.biases.iter().all(|b| b.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of [`bpr_triple_loss`] with respect to each argument.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleGrad {
    pub user: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub pos_bias: f64,
    pub neg_bias: f64,
}

/// `-ln σ(x_uij) + reg/2 (|p|² + |q_i|² + |q_j|² + b_i² + b_j²)`
/// where `x_uij = b_i - b_j + <p, q_i - q_j>`.
pub fn bpr_triple_loss(p: &[f64], qi: &[f64], qj: &[f64], bi: f64, bj: f64, reg: f64) -> f64 {
    let x = bi - bj + dot(p, qi) - dot(p, qj);
    let norm = dot(p, p) + dot(qi, qi) + dot(qj, qj) + bi * bi + bj * bj;
    softplus(-x) + 0.5 * reg * norm
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn bpr_triple_grad(p: &[f64], qi: &[f64], qj: &[f64], bi: f64, bj: f64, reg: f64) -> TripleGrad {
    let x = bi - bj + dot(p, qi) - dot(p, qj);
    let g = -sigmoid(-x);
    TripleGrad {
        user: p.iter().zip(qi.iter().zip(qj)).map(|(&pf, (&a, &b))| g * (a - b) + reg * pf).collect(),
        pos: p.iter().zip(qi).map(|(&pf, &a)| g * pf + reg * a).collect(),
        neg: p.iter().zip(qj).map(|(&pf, &b)| -g * pf + reg * b).collect(),
        pos_bias: g + reg * bi,
        neg_bias: -g + reg * bj,
    }
}

struct UserItems {
    events: Vec<ItemId>,
    seen: BTreeSet<ItemId>,
}

fn user_items(user: &UserHistory) -> UserItems {
    let events: Vec<ItemId> = user.train.iter().flat_map(|s| s.items.iter().copied()).collect();
    let seen = events.iter().copied().collect();
    UserItems { events, seen }
}

fn sample_negative<R: Rng + ?Sized>(seen: &BTreeSet<ItemId>, num_items: usize, rng: &mut R) -> Option<ItemId> {
    if seen.len() >= num_items {
        return None;
    }
    loop {
        let j = ItemId::from_class(rng.gen_range(0..num_items));
        if !seen.contains(&j) {
            return Some(j);
        }
    }
}

fn sgd_step(f: &mut MfFactors, u: usize, i: ItemId, j: ItemId) -> Result<()> {
    let (ci, cj) = (i.class(), j.class());
    let (lr, reg) = (f.config.learning_rate, f.config.regularization);
    let g = bpr_triple_grad(f.users.row(u), f.items.row(ci), f.items.row(cj), f.biases[ci], f.biases[cj], reg);
    for (w, d) in f.users.row_mut(u).iter_mut().zip(&g.user) {
        *w -= lr * d;
    }
    for (w, d) in f.items.row_mut(ci).iter_mut().zip(&g.pos) {
        *w -= lr * d;
    }
    for (w, d) in f.items.row_mut(cj).iter_mut().zip(&g.neg) {
        *w -= lr * d;
    }
    f.biases[ci] -= lr * g.pos_bias;
    f.biases[cj] -= lr * g.neg_bias;
    let touched = f.users.row(u).iter().chain(f.items.row(ci)).chain(f.items.row(cj));
    if !touched.chain([&f.biases[ci], &f.biases[cj]]).all(|v| v.is_finite()) {
        return Err(Error::Training(format!("BPR-MF diverged at triple ({u}, {i}, {j})")));
    }
    Ok(())
}

/// Fits factors by SGD over sampled `(u, i, j)` triples from the training
/// part of `users`. Negatives are drawn uniformly from the items `u` never
/// touched in training.
pub fn bpr_mf_train(users: &[UserHistory], num_items: usize, config: &BprConfig) -> Result<MfFactors> {
    if config.factors == 0 || num_items == 0 {
        return Err(Error::Config("BPR-MF needs at least one factor and one item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut factors = MfFactors {
        users: DenseArray::uniform(&[users.len(), config.factors], config.init_scale, &mut rng),
        items: DenseArray::uniform(&[num_items, config.factors], config.init_scale, &mut rng),
        biases: vec![0.0; num_items],
        user_index: users.iter().enumerate().map(|(x, u)| (u.user.clone(), x)).collect(),
        config: config.clone(),
    };
    let data: Vec<UserItems> = users.iter().map(user_items).collect();
    let mut positives: Vec<(usize, ItemId)> = data
        .iter()
        .enumerate()
        .flat_map(|(u, d)| d.events.iter().map(move |&i| (u, i)))
        .collect();
    for epoch in 0..config.epochs {
        positives.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut triples = 0usize;
        for &(u, i) in &positives {
            for _ in 0..config.negatives {
                let Some(j) = sample_negative(&data[u].seen, num_items, &mut rng) else {
                    break;
                };
                let (ci, cj) = (i.class(), j.class());
                loss += bpr_triple_loss(
                    factors.users.row(u),
                    factors.items.row(ci),
                    factors.items.row(cj),
                    factors.biases[ci],
                    factors.biases[cj],
                    config.regularization,
                );
                triples += 1;
                sgd_step(&mut factors, u, i, j)?;
            }
        }
        info!("bpr epoch {} mean triple loss {:.5}", epoch + 1, loss / triples.max(1) as f64);
    }
    Ok(factors)
}

/// Top `k` items for the user at row `user`, by score then ascending id.
/// Previously seen items are not excluded.
pub fn bpr_mf_recommend(factors: &MfFactors, user: usize, k: usize) -> Vec<ItemId> {
    let mut scored: Vec<(f64, ItemId)> = (0..factors.num_items())
        .map(|c| {
            let i = ItemId::from_class(c);
            (factors.score(user, i), i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

pub struct BprRecommender {
    pub factors: MfFactors,
    pub fallback: PopularityTable,
}

struct ConstantSession(Vec<ItemId>);

impl UserSession for ConstantSession {
    fn begin_session(&mut self, _start_time: i64) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, _item: ItemId, k: usize) -> Result<Vec<ItemId>> {
        Ok(self.0.iter().take(k).copied().collect())
    }

    fn end_session(&mut self, _session: &Session) -> Result<()> {
        Ok(())
    }
}

impl Recommender for BprRecommender {
    fn name(&self) -> String {
        "bpr-mf".into()
    }

    fn start_user<'a>(&'a self, _index: usize, user: &'a UserHistory) -> Result<Box<dyn UserSession + 'a>> {
        let n = self.factors.num_items();
        let list = match self.factors.user_index.get(&user.user) {
            Some(&u) => bpr_mf_recommend(&self.factors, u, n),
            None => {
                debug!("user {} unknown to BPR-MF; using most popular", user.user);
                self.fallback.recommend(n)
            }
        };
        Ok(Box::new(ConstantSession(list)))
    }
}
