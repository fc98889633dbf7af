use std::collections::BTreeMap;

use log::debug;

use super::{Corpus, Interaction, ItemVocabulary, Session, UserHistory, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawEvent {
    pub item: String,
    pub timestamp: i64,
}

/// A session before vocabulary assignment; keeps per-event timestamps so a
/// split-off tail knows its own start time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSession {
    pub events: Vec<RawEvent>,
}

impl RawSession {
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, i64)>) -> Self {
        RawSession {
            events: pairs
                .into_iter()
                .map(|(item, timestamp)| RawEvent {
                    item: item.into(),
                    timestamp,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start_time(&self) -> i64 {
        self.events.first().map_or(0, |e| e.timestamp)
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.item.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub gap_limit: i64,
    pub max_len: usize,
    pub train_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            gap_limit: super::REDDIT_GAP_SECONDS,
            max_len: DEFAULT_MAX_LEN,
            train_fraction: 0.8,
        }
    }
}

/// Splits one user's time-sorted events wherever the gap to the previous
/// event exceeds `gap_limit` seconds.
pub fn split_into_sessions(events: &[Interaction], gap_limit: i64) -> Result<Vec<RawSession>> {
    let mut sessions: Vec<RawSession> = Vec::new();
    let mut prev: Option<i64> = None;
    for ev in events {
        match prev {
            Some(p) if ev.timestamp < p => {
                return Err(Error::Ingestion(format!(
                    "events of user {} are not sorted by timestamp ({} after {p})",
                    ev.user, ev.timestamp
                )));
            }
            Some(p) if ev.timestamp - p <= gap_limit => {}
            _ => sessions.push(RawSession { events: Vec::new() }),
        }
        sessions.last_mut().unwrap().events.push(RawEvent {
            item: ev.item.clone(),
            timestamp: ev.timestamp,
        });
        prev = Some(ev.timestamp);
    }
    Ok(sessions)
}

/// Keeps the first event of every run of consecutive equal items.
pub fn collapse_repeats(session: &RawSession) -> RawSession {
    let mut events: Vec<RawEvent> = Vec::with_capacity(session.len());
    for ev in &session.events {
        if events.last().map_or(true, |last| last.item != ev.item) {
            events.push(ev.clone());
        }
    }
    RawSession { events }
}

/// Sessions up to `max_len` pass through; those shorter than twice the limit
/// become a `max_len` prefix plus the remainder; longer ones are dropped.
pub fn enforce_length(session: &RawSession, max_len: usize) -> Vec<RawSession> {
    let l = session.len();
    if l <= max_len {
        vec![session.clone()]
    } else if l < 2 * max_len {
        let (head, tail) = session.events.split_at(max_len);
        vec![
            RawSession { events: head.to_vec() },
            RawSession { events: tail.to_vec() },
        ]
    } else {
        Vec::new()
    }
}

/// Number of training sessions for a user with `count` sessions:
/// `min(ceil(fraction * count), count - 1)`.
pub fn train_count(count: usize, fraction: f64) -> usize {
    let raw = (fraction * count as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.min(count.saturating_sub(1))
}

/// Applies the length and user filters, splits each user's sessions into the
/// oldest (train) and most recent (test) parts, and builds the vocabulary from
/// training items. Test events whose item never occurs in training are
/// removed.
pub fn filter_and_split(
    users: BTreeMap<String, Vec<RawSession>>,
    train_fraction: f64,
) -> Result<Corpus> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1], got {train_fraction}"
        )));
    }
    let mut kept: Vec<(String, Vec<RawSession>)> = Vec::new();
    for (user, sessions) in users {
        let mut sessions: Vec<RawSession> = sessions.into_iter().filter(|s| s.len() >= 2).collect();
        if sessions.len() < 3 {
            continue;
        }
        sessions.sort_by_key(RawSession::start_time);
        kept.push((user, sessions));
    }
    if kept.is_empty() {
        return Err(Error::Ingestion("no users left after filtering".into()));
    }

    let mut vocab = ItemVocabulary::new();
    let mut splits = Vec::with_capacity(kept.len());
    for (user, mut sessions) in kept {
        let n_train = train_count(sessions.len(), train_fraction);
        let test_raw = sessions.split_off(n_train);
        let train: Vec<Session> = sessions
            .iter()
            .map(|s| Session::new(s.items().map(|i| vocab.intern(i)).collect(), s.start_time()))
            .collect();
        splits.push((user, train, test_raw));
    }

    let mut dropped_events = 0usize;
    let users = splits
        .into_iter()
        .map(|(user, train, test_raw)| {
            let test = test_raw
                .iter()
                .filter_map(|s| {
                    let known: Vec<RawEvent> = s
                        .events
                        .iter()
                        .filter(|e| vocab.id(&e.item).is_some())
                        .cloned()
                        .collect();
                    dropped_events += s.len() - known.len();
                    let known = collapse_repeats(&RawSession { events: known });
                    (known.len() >= 2).then(|| {
                        Session::new(
                            known.items().map(|i| vocab.id(i).unwrap()).collect(),
                            known.start_time(),
                        )
                    })
                })
                .collect();
            UserHistory { user, train, test }
        })
        .collect();
    if dropped_events > 0 {
        debug!("dropped {dropped_events} test events with items unseen in training");
    }
    Ok(Corpus { vocab, users })
}

/// Re-splits each user so that only the final session is held out.
pub fn hold_one_out_split(users: &[UserHistory]) -> Vec<UserHistory> {
    users
        .iter()
        .map(|u| {
            let mut all: Vec<Session> = u.sessions().cloned().collect();
            let test = all.pop().into_iter().collect();
            UserHistory {
                user: u.user.clone(),
                train: all,
                test,
            }
        })
        .collect()
}

/// Full pipeline: group by user, sort by time, segment, collapse repeats,
/// enforce the length limit, filter and split.
pub fn preprocess(interactions: Vec<Interaction>, cfg: &PreprocessConfig) -> Result<Corpus> {
    if cfg.max_len < 2 {
        return Err(Error::Config(format!("max_len must be >= 2, got {}", cfg.max_len)));
    }
    let mut by_user: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
    for ev in interactions {
        by_user.entry(ev.user.clone()).or_default().push(ev);
    }
    let mut sessions = BTreeMap::new();
    for (user, mut events) in by_user {
        events.sort_by_key(|e| e.timestamp);
        let shaped: Vec<RawSession> = split_into_sessions(&events, cfg.gap_limit)?
            .iter()
            .map(collapse_repeats)
            .flat_map(|s| enforce_length(&s, cfg.max_len))
            .collect();
        sessions.insert(user, shaped);
    }
    filter_and_split(sessions, cfg.train_fraction)
}
