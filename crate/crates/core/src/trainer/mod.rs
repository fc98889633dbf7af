//! Mini-batch training of the recurrent recommenders.

mod checkpoint;
mod config;
mod plan;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use config::{parse_list, TrainConfig, CONFIG_KEYS};
pub use plan::{make_batch_plan, BatchPlan, SessionRef};

use crate::corpus::{Corpus, ItemId, Session, UserHistory};
use crate::error::{Error, Result};
use crate::metrics::{Recommender, UserSession};
use crate::nets::{
    inter_forward, intra_forward, make_repr, replay_history, session_loss_and_grads, top_k, Dropout,
    IntraCursor, ModelParams, SessionLoss, UserReprBuffer,
};
use crate::numerics::{adam_step, softmax_cross_entropy, AdamHyper, AdamState};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-session loss over the epoch's training sessions.
    pub train_loss: f64,
    /// Mean per-prediction loss on the held-out tail, if there is one.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Set when training stopped early on a non-finite value.
    pub aborted: Option<String>,
}

/// Number of trailing training sessions of a user held out for epoch
/// selection.
pub fn validation_count(sessions: usize, fraction: f64) -> usize {
    ((sessions as f64 * fraction - 1e-9).ceil().max(0.0) as usize).min(sessions.saturating_sub(1))
}

fn split_for_validation<'a>(users: &'a [UserHistory], fraction: f64) -> Vec<(&'a [Session], &'a [Session])> {
    users
        .iter()
        .map(|u| u.train.split_at(u.train.len() - validation_count(u.train.len(), fraction)))
        .collect()
}

fn dropout_seed(seed: u64, epoch: usize, batch: usize, slot: usize) -> u64 {
    let mut h = seed ^ 0x5851_f42d_4c95_7f2d;
    for v in [epoch, batch, slot] {
        h = (h ^ v as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29);
    }
    h
}

fn clip_global_norm(grads: &mut ModelParams<f32>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.named().iter().map(|(_, a)| a.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for a in grads.arrays_mut() {
            a.scale(s);
        }
    }
}

/// Eval-mode mean cross-entropy over every prediction in the validation
/// sessions, each user's buffer first rebuilt from their training part.
fn validation_loss(params: &ModelParams<f32>, split: &[(&[Session], &[Session])], history: usize) -> Result<Option<f64>> {
    let per_user: Vec<(f64, usize)> = split
        .par_iter()
        .map(|(train, val)| {
            let mut sum = 0.0;
            let mut count = 0usize;
            if val.is_empty() {
                return Ok((sum, count));
            }
            let mut buffer = replay_history(params, train, history)?;
            for s in val.iter() {
                let h0 = inter_forward(&buffer, params)?;
                let out = intra_forward(&s.items, &h0, params, None)?;
                for (logits, target) in out.logits.iter().zip(&s.items[1..]) {
                    sum += softmax_cross_entropy(logits, target.class())?.0 as f64;
                    count += 1;
                }
                if params.variant.uses_history() {
                    buffer.push(make_repr(params, s, &out.final_hidden)?)?;
                }
            }
            Ok((sum, count))
        })
        .collect::<Result<_>>()?;
    let (sum, count) = per_user.iter().fold((0.0, 0), |(a, b), (s, c)| (a + s, b + c));
    Ok((count > 0).then(|| sum / count as f64))
}

fn init_checkpoint(config: &TrainConfig, corpus: &Corpus) -> Result<Checkpoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::<f32>::init(config.variant, config.dims(corpus.num_items()), config.init_scale, &mut rng)?;
    let hyper = AdamHyper {
        lr: config.lr,
        ..AdamHyper::default()
    };
    let adam = params.named().iter().map(|(_, a)| AdamState::new(a.dims(), hyper)).collect();
    Ok(Checkpoint {
        config: config.clone(),
        params,
        adam,
        vocab_hash: corpus.vocab.fingerprint(),
        epoch: 0,
    })
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    split: Vec<(&'a [Session], &'a [Session])>,
    state: Checkpoint,
}

impl Trainer<'_> {
    fn run_epoch(&mut self, epoch: usize) -> Result<f64> {
        let cfg = self.config;
        let counts: Vec<usize> = self.split.iter().map(|(t, _)| t.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1 + epoch as u64));
        let plan = make_batch_plan(&counts, cfg.batch_size, &mut rng);
        let mut buffers: Vec<UserReprBuffer<f32>> = counts.iter().map(|_| UserReprBuffer::new(cfg.history)).collect();
        let mut total = 0.0;
        for (b, batch) in plan.batches.iter().enumerate() {
            let params = &self.state.params;
            let results: Vec<SessionLoss<f32>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &(u, s))| {
                    let session = &self.split[u].0[s];
                    let mut drng = ChaCha8Rng::seed_from_u64(dropout_seed(cfg.seed, epoch, b, slot));
                    let dropout = (cfg.keep_prob < 1.0).then(|| Dropout {
                        keep_prob: cfg.keep_prob,
                        rng: &mut drng,
                    });
                    session_loss_and_grads(&buffers[u], &session.items, params, dropout)
                })
                .collect::<Result<_>>()?;
            let mut grads = params.zeros_like();
            let w = 1.0 / batch.len() as f32;
            for (r, &(u, s)) in results.iter().zip(batch) {
                total += r.loss as f64;
                grads.axpy(w, &r.grads)?;
                if params.variant.uses_history() {
                    let repr = make_repr(params, &self.split[u].0[s], &r.final_hidden)?;
                    buffers[u].push(repr)?;
                }
            }
            clip_global_norm(&mut grads, cfg.max_norm);
            let names: Vec<String> = self.state.params.named().into_iter().map(|(n, _)| n).collect();
            let grad_arrays = grads.named();
            for (((name, p), (_, g)), st) in names
                .iter()
                .zip(self.state.params.arrays_mut())
                .zip(grad_arrays)
                .zip(self.state.adam.iter_mut())
            {
                adam_step(name, p, g, st)?;
            }
            if !self.state.params.is_finite() {
                return Err(Error::Training(format!("parameters became non-finite in epoch {}", epoch + 1)));
            }
        }
        Ok(total / plan.num_sessions().max(1) as f64)
    }
}

/// Trains for `max_epochs` and keeps the epoch with the lowest validation
/// loss, or the last epoch when no user has validation sessions.
pub fn train(config: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.num_items() == 0 {
        return Err(Error::Config("corpus has no items".into()));
    }
    let init = init_checkpoint(config, corpus)?;
    let mut trainer = Trainer {
        config,
        split: split_for_validation(&corpus.users, config.val_fraction),
        state: init.clone(),
    };
    let mut best = init;
    let mut best_val = f64::INFINITY;
    let mut log = Vec::new();
    let mut aborted = None;
    for epoch in 0..config.max_epochs {
        let train_loss = match trainer.run_epoch(epoch) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => {
                aborted = Some(format!("epoch {} produced loss {l}", epoch + 1));
                break;
            }
            Err(Error::Training(msg)) => {
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        trainer.state.epoch = epoch as u64 + 1;
        let val_loss = validation_loss(&trainer.state.params, &trainer.split, config.history)?;
        info!(
            "epoch {} train loss {:.5} val loss {}",
            epoch + 1,
            train_loss,
            val_loss.map_or("n/a".to_string(), |v| format!("{v:.5}"))
        );
        match val_loss {
            Some(v) if v.is_finite() => {
                if v < best_val {
                    best_val = v;
                    best = trainer.state.clone();
                }
            }
            Some(v) => {
                aborted = Some(format!("epoch {} produced validation loss {v}", epoch + 1));
                log.push(EpochLog { epoch: epoch + 1, train_loss, val_loss });
                break;
            }
            None => best = trainer.state.clone(),
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
    }
    if let Some(msg) = &aborted {
        warn!("training stopped early: {msg}; keeping epoch {}", best.epoch);
    }
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        aborted,
    })
}

/// Evaluation adapter for trained recurrent models. Each user's buffer is
/// rebuilt from their training sessions, and every finished test session
/// is appended to it.
pub struct RnnRecommender {
    pub params: ModelParams<f32>,
    pub history: usize,
}

impl RnnRecommender {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        RnnRecommender {
            params: ckpt.params.clone(),
            history: ckpt.config.history,
        }
    }
}

struct RnnSession<'a> {
    params: &'a ModelParams<f32>,
    buffer: UserReprBuffer<f32>,
    cursor: Option<IntraCursor<'a, f32>>,
}

impl UserSession for RnnSession<'_> {
    fn begin_session(&mut self, _start_time: i64) -> Result<()> {
        let h0 = inter_forward(&self.buffer, self.params)?;
        self.cursor = Some(IntraCursor::new(self.params, &h0));
        Ok(())
    }

    fn observe(&mut self, item: ItemId, k: usize) -> Result<Vec<ItemId>> {
        let cursor = self
            .cursor
            .as_mut()
            .ok_or_else(|| Error::Inference("observe called outside a session".into()))?;
        let logits = cursor.observe(item)?;
        Ok(top_k(&logits, k).into_iter().map(|(i, _)| i).collect())
    }

    fn end_session(&mut self, session: &Session) -> Result<()> {
        let mut cursor = self
            .cursor
            .take()
            .ok_or_else(|| Error::Inference("end_session called outside a session".into()))?;
        if self.params.variant.uses_history() {
            if let Some(&last) = session.items.last() {
                cursor.observe(last)?;
            }
            let repr = make_repr(self.params, session, cursor.hidden())?;
            self.buffer.push(repr)?;
        }
        Ok(())
    }
}

impl Recommender for RnnRecommender {
    fn name(&self) -> String {
        self.params.variant.to_string()
    }

    fn start_user<'a>(&'a self, _index: usize, user: &'a UserHistory) -> Result<Box<dyn UserSession + 'a>> {
        Ok(Box::new(RnnSession {
            params: &self.params,
            buffer: replay_history(&self.params, &user.train, self.history)?,
            cursor: None,
        }))
    }
}
