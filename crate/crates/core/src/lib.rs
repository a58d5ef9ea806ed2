//! Structural node features for knowledge-graph GNN training.
//!
//! The pipeline precomputes two frozen per-entity features, a Bloom filter over
//! the typed 1-hop neighborhood ([`bloom`]) and a TransE embedding ([`kge`]),
//! fuses them through a small learned network ([`fusion`]), and trains shallow
//! message-passing encoders ([`encoder`]) with link or node decoders
//! ([`decoders`]). Link prediction is evaluated with filtered ranking
//! ([`eval`]).

pub mod bloom;
pub mod config;
pub mod decoders;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod footprint;
pub mod fusion;
pub mod io;
pub mod kg;
pub mod kge;
pub mod negatives;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use kg::{Direction, EntityId, KnowledgeGraph, RelationId, Side, Triple};
