//! Next-item evaluation: Recall@K, MRR@K and first-n cold-start cells.

mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::{ItemId, Session, UserHistory, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};

pub use report::{emit_coldstart, emit_report, read_report, render_coldstart, render_report, ReportRow};

/// Per-user state of a recommender while it walks through that user's test
/// sessions in temporal order.
pub trait UserSession {
    fn begin_session(&mut self, start_time: i64) -> Result<()>;

    /// Feeds the true item at the current step and returns the top `k`
    /// predictions for the next one, best first.
    fn observe(&mut self, item: ItemId, k: usize) -> Result<Vec<ItemId>>;

    /// Called with the complete session once all its steps were observed.
    fn end_session(&mut self, session: &Session) -> Result<()>;
}

pub trait Recommender: Sync {
    fn name(&self) -> String;

    /// Starts evaluation of the user at `index` in the test corpus. The
    /// user's training sessions are available for warm-up.
    fn start_user<'a>(&'a self, index: usize, user: &'a UserHistory) -> Result<Box<dyn UserSession + 'a>>;
}

pub fn recall_at_k(recs: &[ItemId], target: ItemId) -> f64 {
    if recs.contains(&target) {
        1.0
    } else {
        0.0
    }
}

pub fn mrr_at_k(recs: &[ItemId], target: ItemId) -> f64 {
    recs.iter()
        .position(|&i| i == target)
        .map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

/// Which predictions of a session a cell aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Position {
    /// The first `n` predictions of each session.
    First(usize),
    All,
}

impl Position {
    fn includes(self, step: usize) -> bool {
        match self {
            Position::First(n) => step <= n,
            Position::All => true,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::First(n) => write!(f, "{n}"),
            Position::All => f.write_str("all"),
        }
    }
}

impl FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Position::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Position::First(n)),
            _ => Err(Error::Format(format!("bad position {s:?}"))),
        }
    }
}

/// Sums over predictions; means are taken on read.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricCell {
    pub recall_sum: f64,
    pub rr_sum: f64,
    pub count: u64,
}

impl MetricCell {
    pub fn recall(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.recall_sum / self.count as f64
        }
    }

    pub fn mrr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.rr_sum / self.count as f64
        }
    }

    fn add(&mut self, other: &MetricCell) {
        self.recall_sum += other.recall_sum;
        self.rr_sum += other.rr_sum;
        self.count += other.count;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// First-n positions; `All` is always reported in addition.
    pub positions: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 10, 20],
            positions: vec![1, 2, 3, 4, 5, DEFAULT_MAX_LEN],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("cutoffs must be a non-empty list of positive integers".into()));
        }
        if self.positions.contains(&0) {
            return Err(Error::Config("positions start at 1".into()));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }

    pub fn all_positions(&self) -> Vec<Position> {
        let mut p: Vec<Position> = self.positions.iter().map(|&n| Position::First(n)).collect();
        p.push(Position::All);
        p
    }
}

/// Cells of one model, indexed by cutoff then position.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelReport {
    pub model: String,
    pub ks: Vec<usize>,
    pub positions: Vec<Position>,
    pub cells: Vec<Vec<MetricCell>>,
}

impl ModelReport {
    pub fn empty(model: impl Into<String>, config: &EvalConfig) -> Self {
        let positions = config.all_positions();
        ModelReport {
            model: model.into(),
            ks: config.ks.clone(),
            cells: vec![vec![MetricCell::default(); positions.len()]; config.ks.len()],
            positions,
        }
    }

    pub fn cell(&self, k: usize, position: Position) -> Option<&MetricCell> {
        let a = self.ks.iter().position(|&x| x == k)?;
        let b = self.positions.iter().position(|&p| p == position)?;
        Some(&self.cells[a][b])
    }

    pub fn recall(&self, k: usize, position: Position) -> Option<f64> {
        self.cell(k, position).map(MetricCell::recall)
    }

    pub fn mrr(&self, k: usize, position: Position) -> Option<f64> {
        self.cell(k, position).map(MetricCell::mrr)
    }

    fn merge(&mut self, other: &ModelReport) {
        for (row, orow) in self.cells.iter_mut().zip(&other.cells) {
            for (c, o) in row.iter_mut().zip(orow) {
                c.add(o);
            }
        }
    }

    /// Checks `0 <= MRR@K <= Recall@K <= 1` and monotonicity in K for
    /// every position.
    pub fn check_invariants(&self) -> Result<()> {
        const EPS: f64 = 1e-12;
        let mut order: Vec<usize> = (0..self.ks.len()).collect();
        order.sort_by_key(|&a| self.ks[a]);
        for (b, pos) in self.positions.iter().enumerate() {
            let mut prev: Option<(f64, f64)> = None;
            for &a in &order {
                let c = &self.cells[a][b];
                let (r, m) = (c.recall(), c.mrr());
                let k = self.ks[a];
                if !(0.0..=1.0 + EPS).contains(&r) || m < -EPS || m > r + EPS {
                    return Err(Error::Inference(format!(
                        "{}: cell k={k} position={pos} out of range (recall {r}, mrr {m})",
                        self.model
                    )));
                }
                if let Some((pr, pm)) = prev {
                    if r + EPS < pr || m + EPS < pm {
                        return Err(Error::Inference(format!(
                            "{}: metrics decrease with k at position {pos}",
                            self.model
                        )));
                    }
                }
                prev = Some((r, m));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub models: Vec<ModelReport>,
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn check_invariants(&self) -> Result<()> {
        self.models.iter().try_for_each(ModelReport::check_invariants)
    }
}

fn evaluate_user(
    model: &dyn Recommender,
    index: usize,
    user: &UserHistory,
    config: &EvalConfig,
    max_k: usize,
) -> Result<ModelReport> {
    let mut report = ModelReport::empty(String::new(), config);
    let mut state = model.start_user(index, user)?;
    for session in &user.test {
        state.begin_session(session.start_time)?;
        for (j, pair) in session.items.windows(2).enumerate() {
            let recs = state.observe(pair[0], max_k)?;
            let step = j + 1;
            let rank = recs.iter().position(|&i| i == pair[1]);
            for (a, &k) in config.ks.iter().enumerate() {
                let hit = rank.filter(|&r| r < k);
                let cell = MetricCell {
                    recall_sum: if hit.is_some() { 1.0 } else { 0.0 },
                    rr_sum: hit.map_or(0.0, |r| 1.0 / (r + 1) as f64),
                    count: 1,
                };
                for (b, pos) in report.positions.iter().enumerate() {
                    if pos.includes(step) {
                        report.cells[a][b].add(&cell);
                    }
                }
            }
        }
        state.end_session(session)?;
    }
    Ok(report)
}

/// Scores every next-item prediction of every test session. Users are
/// processed in parallel; each user's sessions run in temporal order with
/// the true items fed back at every step. Per-user sums are reduced in user
/// order, so the result does not depend on scheduling.
pub fn evaluate(model: &dyn Recommender, users: &[UserHistory], config: &EvalConfig) -> Result<ModelReport> {
    config.validate()?;
    let max_k = config.max_k();
    let per_user: Vec<ModelReport> = users
        .par_iter()
        .enumerate()
        .map(|(index, user)| evaluate_user(model, index, user, config, max_k))
        .collect::<Result<_>>()?;
    let mut report = ModelReport::empty(model.name(), config);
    for r in &per_user {
        report.merge(r);
    }
    Ok(report)
}
