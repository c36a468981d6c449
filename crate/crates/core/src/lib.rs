//! Dynamical optimal transport on graphs embedded in `R^n`.

pub mod cell;
pub mod curve;
pub mod density;
pub mod energy;
pub mod experiments;
pub mod error;
pub mod geodesic;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod means;
pub mod random_graphs;
pub mod recovery;
pub mod uniform_flow;
pub mod wasserstein;

pub use error::{Error, Result};
