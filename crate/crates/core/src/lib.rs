//! Session-based next-item recommendation with inter-session recurrent
//! networks.
//!
//! A per-user inter-session GRU reads representations of the user's most
//! recent sessions and produces the initial hidden state of an intra-session
//! GRU recommender. The crate also contains the preprocessing pipeline for
//! raw interaction logs, four classical baselines, a Recall@K / MRR@K
//! evaluation harness with per-position cold-start curves, a synthetic corpus
//! generator and the `iirnn` command line tool.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod numerics;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
