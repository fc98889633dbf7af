use crate::corpus::{ItemId, Session, UserHistory};
use crate::error::Result;
use crate::metrics::{Recommender, UserSession};

/// Training-set occurrence counts with a cached descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityTable {
    counts: Vec<u64>,
    order: Vec<ItemId>,
}

impl PopularityTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let mut order: Vec<ItemId> = (0..counts.len()).map(ItemId::from_class).collect();
        order.sort_by(|a, b| counts[b.class()].cmp(&counts[a.class()]).then(a.cmp(b)));
        PopularityTable { counts, order }
    }

    pub fn fit(users: &[UserHistory], num_items: usize) -> Self {
        let mut counts = vec![0u64; num_items];
        for item in users.iter().flat_map(|u| &u.train).flat_map(|s| &s.items) {
            counts[item.class()] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn count(&self, item: ItemId) -> u64 {
        self.counts.get(item.class()).copied().unwrap_or(0)
    }

    pub fn num_items(&self) -> usize {
        self.counts.len()
    }

    /// Items by descending count.
    pub fn order(&self) -> &[ItemId] {
        &self.order
    }

    pub fn recommend(&self, k: usize) -> Vec<ItemId> {
        self.order.iter().take(k).copied().collect()
    }
}

pub struct PopularRecommender {
    pub table: PopularityTable,
}

struct PopularSession<'a>(&'a PopularityTable);

impl UserSession for PopularSession<'_> {
    fn begin_session(&mut self, _start_time: i64) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, _item: ItemId, k: usize) -> Result<Vec<ItemId>> {
        Ok(self.0.recommend(k))
    }

    fn end_session(&mut self, _session: &Session) -> Result<()> {
        Ok(())
    }
}

impl Recommender for PopularRecommender {
    fn name(&self) -> String {
        "most-popular".into()
    }

    fn start_user<'a>(&'a self, _index: usize, _user: &'a UserHistory) -> Result<Box<dyn UserSession + 'a>> {
        Ok(Box::new(PopularSession(&self.table)))
    }
}
