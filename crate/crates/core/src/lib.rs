//! Collaborative inference over additively shared feed-forward networks.
//!
//! Model owners split their parameters between two non-colluding workers,
//! a client splits its input the same way, and the workers evaluate every
//! model on shares with help from a dealer of correlated randomness. A
//! trusted aggregator reconstructs the per-model outputs, releases a
//! Laplace-noised vote, and seals the label for the client.

pub mod dp;
pub mod error;
pub mod model;
pub mod protocol;
pub mod ring;
pub mod runtime;
pub mod sharing;
pub mod transport;

pub use error::{Error, ErrorKind, ProtocolError, Result};
