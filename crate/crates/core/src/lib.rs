//! Search engine for throughput- and money-optimal hybrid-parallel
//! training strategies over homogeneous and heterogeneous GPU fleets.
//!
//! The pipeline: expand the requested GPU pool into configurations,
//! enumerate parallel-parameter candidates, drop strategies matched by
//! user rules or exceeding device memory, price the survivors with an
//! operator-level analytical time model, then rank them by throughput
//! and money.

pub mod catalog;
pub mod costsim;
pub mod error;
pub mod fixtures;
pub mod hetero;
pub mod memest;
pub mod modes;
pub mod pareto;
pub mod report;
pub mod rulelang;
pub mod search;
pub mod strategy;

pub use error::{Error, Result};
