//! Open intent induction from dialogue corpora.
//!
//! Utterances carrying an intent are embedded in three views (a general
//! embedding, a multi-domain fine-tuned head and a pseudo-label fine-tuned
//! head), concatenated, clustered with K chosen by silhouette, and scored
//! against gold intents after Hungarian alignment.

pub mod align;
pub mod clustering;
pub mod corpus;
pub mod error;
pub mod fixtures;
pub mod mdb_train;
pub mod numerics;
pub mod pipeline;
pub mod pgt_train;
pub mod schema_classifier;
pub mod views;

pub use error::{Error, Result};

#[cfg(feature = "cli")]
pub mod cli;
