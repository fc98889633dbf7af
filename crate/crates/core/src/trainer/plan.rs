use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

/// One training step: a session identified by user index and the session's
/// position within that user's training list.
pub type SessionRef = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<SessionRef>>,
}

impl BatchPlan {
    pub fn num_sessions(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Fills `batch_size` slots with users in a seeded random order. Each slot
/// walks its user's sessions oldest to newest and takes the next waiting
/// user once its current one runs out, so a batch never holds two sessions
/// of one user. Slots without a user left are dropped.
pub fn make_batch_plan<R: Rng + ?Sized>(session_counts: &[usize], batch_size: usize, rng: &mut R) -> BatchPlan {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..session_counts.len()).filter(|&u| session_counts[u] > 0).collect();
    order.shuffle(rng);
    let mut waiting: VecDeque<usize> = order.into();
    let mut slots: Vec<Option<(usize, usize)>> = vec![None; batch_size];
    let mut batches = Vec::new();
    loop {
        for slot in slots.iter_mut() {
            if slot.is_none() {
                *slot = waiting.pop_front().map(|u| (u, 0));
            }
        }
        let batch: Vec<SessionRef> = slots.iter().flatten().copied().collect();
        if batch.is_empty() {
            break;
        }
        for slot in slots.iter_mut() {
            if let Some((u, s)) = *slot {
                *slot = (s + 1 < session_counts[u]).then_some((u, s + 1));
            }
        }
        batches.push(batch);
    }
    BatchPlan { batches }
}
