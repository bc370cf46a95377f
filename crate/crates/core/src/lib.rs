//! Text-to-SQL semantic parsing over database schemas encoded as typed graphs.
//!
//! The pipeline: a [`schema::Schema`] becomes a [`schema::SchemaGraph`];
//! question words are linked to schema items ([`linking`]); a gated graph
//! network ([`gnn`]) produces question-conditioned item representations;
//! and a grammar-constrained encoder-decoder ([`model`]) emits derivations
//! of the SQL grammar in [`grammar`]. [`data`] holds preprocessing,
//! evaluation, join analysis and the synthetic dataset generator; [`pipeline`]
//! runs them over whole datasets.

pub mod tensor;
pub mod schema;
pub mod linking;
pub mod gnn;
pub mod grammar;
pub mod model;
pub mod data;
pub mod pipeline;
