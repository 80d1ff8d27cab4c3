//! Density-dependent Markov jump processes: model definitions, drift
//! geometry, exact simulation and quasi-equilibrium analysis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops are
// kept where several arrays share the index.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod model;
pub mod linalg;
pub mod rng;
pub mod dynamics;
pub mod stats;
pub mod simulate;
pub mod equilibrium;
pub mod cli;
