//! Counterfactual identification from arbitrary realizable input distributions.
//!
//! The crate decides whether a Layer-3 causal query is identifiable from a
//! set of input data-collection regimes over a causal diagram, returning a
//! symbolic estimand or a non-identifiability certificate, and computes
//! partial-identification bounds when point identification fails. A
//! brute-force discrete-SCM oracle backs every symbolic result numerically.

pub mod engine;
pub mod estimand;
pub mod expr;
pub mod graph;
pub mod layer;
pub mod oracle;
pub mod regime;
pub mod rewrite;
pub mod witness;
