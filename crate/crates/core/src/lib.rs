//! Embedding models for episodic (temporal) knowledge graphs.
//!
//! The crate covers the whole pipeline: fact stores and their derived
//! datasets ([`kg`]), scoring functions with analytic gradients ([`models`]),
//! logistic/margin training with sparse Adam ([`training`]), filtered ranking
//! metrics ([`eval`]) and the episodic-to-semantic projection
//! ([`projection`]). Trained parameters persist as self-describing binary
//! [`checkpoint`]s; experiments are described by [`config`] files.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod kg;
pub mod models;
pub mod projection;
pub mod training;
