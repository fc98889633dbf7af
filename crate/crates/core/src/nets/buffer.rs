use std::collections::VecDeque;

use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::numerics::Real;

/// Summary of one finished session as seen by the inter-session GRU.
///
/// `items` is kept so that average-pooled representations can be recomputed
/// from the live embedding table during training.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionRepr<T = f32> {
    pub vector: Vec<T>,
    pub session_start: i64,
    pub items: Vec<ItemId>,
}

/// The `g` most recent session representations of one user, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct UserReprBuffer<T = f32> {
    capacity: usize,
    entries: VecDeque<SessionRepr<T>>,
}

impl<T: Real> UserReprBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        UserReprBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SessionRepr<T>> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends the newest representation, evicting the oldest beyond
    /// capacity. Session starts must not go backwards.
    pub fn push(&mut self, repr: SessionRepr<T>) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if repr.session_start < last.session_start {
                return Err(Error::Usage(format!(
                    "session starting at {} appended after one starting at {}",
                    repr.session_start, last.session_start
                )));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(repr);
        Ok(())
    }
}
