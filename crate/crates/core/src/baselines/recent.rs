use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ItemId, Session, UserHistory};
use crate::error::Result;
use crate::metrics::{Recommender, UserSession};

/// Move-to-front list of the `k` most recently seen distinct items, top
/// first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecentStack {
    items: Vec<ItemId>,
}

impl RecentStack {
    pub fn from_items(items: Vec<ItemId>) -> Self {
        RecentStack { items }
    }

    /// `k` distinct items drawn uniformly without replacement.
    pub fn random<R: Rng + ?Sized>(k: usize, num_items: usize, rng: &mut R) -> Self {
        let k = k.min(num_items);
        let items = sample(rng, num_items, k)
            .into_iter()
            .map(ItemId::from_class)
            .collect();
        RecentStack { items }
    }

    /// Puts `item` on top; an item already present moves up, otherwise the
    /// bottom entry falls out.
    pub fn observe(&mut self, item: ItemId) {
        match self.items.iter().position(|&i| i == item) {
            Some(pos) => {
                self.items[..=pos].rotate_right(1);
            }
            None => {
                self.items.pop();
                self.items.insert(0, item);
            }
        }
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }
}

/// Per-user stacks seeded from `seed` and the user index; a user's stack
/// carries over between that user's sessions.
pub struct RecentRecommender {
    pub num_items: usize,
    pub depth: usize,
    pub seed: u64,
}

struct RecentSession(RecentStack);

impl UserSession for RecentSession {
    fn begin_session(&mut self, _start_time: i64) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, item: ItemId, k: usize) -> Result<Vec<ItemId>> {
        self.0.observe(item);
        Ok(self.0.items().iter().take(k).copied().collect())
    }

    fn end_session(&mut self, _session: &Session) -> Result<()> {
        Ok(())
    }
}

impl Recommender for RecentRecommender {
    fn name(&self) -> String {
        "most-recent".into()
    }

    fn start_user<'a>(&'a self, index: usize, _user: &'a UserHistory) -> Result<Box<dyn UserSession + 'a>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Ok(Box::new(RecentSession(RecentStack::random(self.depth, self.num_items, &mut rng))))
    }
}
