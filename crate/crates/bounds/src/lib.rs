//! Partial identification for counterfactual queries that the symbolic
//! engine cannot point-identify.
//!
//! The centerpiece is the bow graph (treatment X with an unobserved
//! confounder into outcome Y) and the cross-world query
//! P(Y_x = y | X = x', Y = y') with x distinct from x'. Three tiers of
//! input data give three nested answers:
//!
//! * observational P(X, Y) alone bounds the query by [0, 1],
//! * adding experimental P(Y_x) gives a closed-form interval [l, r],
//! * adding counterfactual P(Y_x | X) tightens it to [l', r'].
//!
//! The closed forms are checked against exact linear programs over the
//! canonical response-type polytope, which also power the unit-selection
//! decision logic and its report output.

pub mod bow;
pub mod interval;
pub mod polytope;
pub mod report;
pub mod simplex;
pub mod unit;

pub use bow::{frechet_alpha, nte_bounds_l1, nte_bounds_l2, nte_bounds_l25, BowData};
pub use interval::{Interval, Span};
pub use polytope::{polytope_bounds, CanonicalModel, CanonicalPolytope, InfoSet};
pub use report::{BoundsReport, ReportInterval};
pub use unit::{unit_selection, Benefits, Policy, UnitSelectionReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("interval endpoints {lo} and {hi} are not ordered probabilities")]
    BadInterval { lo: f64, hi: f64 },
    #[error("{table} table is malformed: {detail}")]
    BadTable { table: &'static str, detail: String },
    #[error("{tier} data is required but absent")]
    MissingTier { tier: &'static str },
    #[error("query conditions on an event with zero probability: {event}")]
    ZeroMass { event: String },
    #[error("query compares arm {x} with itself; x and x' must differ")]
    SameArm { x: usize },
    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange { what: &'static str, index: usize, size: usize },
    #[error("constraints admit no canonical model: {detail}")]
    Infeasible { detail: String },
    #[error("objective is unbounded over the feasible set")]
    Unbounded,
    #[error("unit selection needs binary treatment and outcome, got |X| = {m}, |Y| = {k}")]
    UnsupportedShape { m: usize, k: usize },
    #[error("malformed csv at line {line}: {detail}")]
    Csv { line: usize, detail: String },
}
