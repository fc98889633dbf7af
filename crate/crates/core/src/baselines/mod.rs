//! Non-recurrent comparison models.
//!
//! All rankings break ties by ascending item id after their primary keys.

mod bpr;
mod knn;
mod popular;
mod recent;

pub use bpr::{
    bpr_mf_recommend, bpr_mf_train, bpr_triple_grad, bpr_triple_loss, BprConfig, BprRecommender,
    MfFactors, TripleGrad,
};
pub use knn::{CoOccurrenceMatrix, ItemKnnRecommender};
pub use popular::{PopularRecommender, PopularityTable};
pub use recent::{RecentRecommender, RecentStack};
