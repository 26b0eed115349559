//! Incremental quizbowl question answering.
//!
//! Questions are revealed word by word. A [`guesser`] produces ranked answers
//! for every prefix, a [`buzzer`] decides when the top answer is worth
//! committing to, and [`eval`] / [`simulate`] score the combination against
//! recorded human play. [`session`] hosts the same agent in a live match.

pub mod answer_map;
pub mod buzzer;
pub mod container;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod folds;
pub mod guesser;
pub mod nn;
pub mod session;
pub mod simulate;

pub use error::{Error, Result};
