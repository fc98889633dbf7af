use std::collections::{BTreeSet, HashMap};

use log::debug;

use super::PopularityTable;
use crate::corpus::{ItemId, Session, UserHistory};
use crate::error::Result;
use crate::metrics::{Recommender, UserSession};

/// Session-level co-occurrence counts: `c(a, b)` is the number of training
/// sessions containing both `a` and `b`.
#[derive(Clone, Debug)]
pub struct CoOccurrenceMatrix {
    counts: Vec<HashMap<ItemId, u32>>,
    ranked: Vec<Vec<ItemId>>,
    popularity: PopularityTable,
}

impl CoOccurrenceMatrix {
    pub fn fit(users: &[UserHistory], num_items: usize) -> Self {
        let mut counts: Vec<HashMap<ItemId, u32>> = vec![HashMap::new(); num_items];
        for s in users.iter().flat_map(|u| &u.train) {
            let distinct: Vec<ItemId> = s.items.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            for (x, &a) in distinct.iter().enumerate() {
                for &b in &distinct[x + 1..] {
                    *counts[a.class()].entry(b).or_default() += 1;
                    *counts[b.class()].entry(a).or_default() += 1;
                }
            }
        }
        let popularity = PopularityTable::fit(users, num_items);
        let ranked = counts
            .iter()
            .map(|row| {
                let mut v: Vec<ItemId> = row.keys().copied().collect();
                v.sort_by(|a, b| {
                    row[b]
                        .cmp(&row[a])
                        .then(popularity.count(*b).cmp(&popularity.count(*a)))
                        .then(a.cmp(b))
                });
                v
            })
            .collect();
        CoOccurrenceMatrix {
            counts,
            ranked,
            popularity,
        }
    }

    pub fn count(&self, a: ItemId, b: ItemId) -> u32 {
        if a == b {
            return 0;
        }
        self.counts
            .get(a.class())
            .and_then(|row| row.get(&b))
            .copied()
            .unwrap_or(0)
    }

    pub fn popularity(&self) -> &PopularityTable {
        &self.popularity
    }

    /// Top `k` items by co-occurrence with `last`. Items that never
    /// co-occur rank after those that do, in popularity order. An item with
    /// no co-occurrences at all falls back to the popularity list.
    pub fn recommend(&self, last: ItemId, k: usize) -> Vec<ItemId> {
        let neighbors = match self.ranked.get(last.class()) {
            Some(n) if !n.is_empty() => n,
            _ => {
                debug!("item {last} has no co-occurrences; using most popular");
                return self.popularity.recommend(k);
            }
        };
        let mut out: Vec<ItemId> = neighbors.iter().take(k).copied().collect();
        if out.len() < k {
            let have: BTreeSet<ItemId> = out.iter().copied().collect();
            out.extend(
                self.popularity
                    .order()
                    .iter()
                    .filter(|&&i| i != last && !have.contains(&i))
                    .take(k - out.len()),
            );
        }
        out
    }
}

pub struct ItemKnnRecommender {
    pub matrix: CoOccurrenceMatrix,
}

struct KnnSession<'a>(&'a CoOccurrenceMatrix);

impl UserSession for KnnSession<'_> {
    fn begin_session(&mut self, _start_time: i64) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, item: ItemId, k: usize) -> Result<Vec<ItemId>> {
        Ok(self.0.recommend(item, k))
    }

    fn end_session(&mut self, _session: &Session) -> Result<()> {
        Ok(())
    }
}

impl Recommender for ItemKnnRecommender {
    fn name(&self) -> String {
        "item-knn".into()
    }

    fn start_user<'a>(&'a self, _index: usize, _user: &'a UserHistory) -> Result<Box<dyn UserSession + 'a>> {
        Ok(Box::new(KnnSession(&self.matrix)))
    }
}
