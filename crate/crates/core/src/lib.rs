//! Link prediction on heterogeneous bipartite graphs: meta-path relation
//! construction, attention aggregation, normalized propagation, a diffusion
//! generator for graded hard negatives, and a reverse-mode autodiff tape
//! driving the whole objective.

pub mod aggregation;
pub mod check;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod metapath;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sparse;
pub mod tape;

pub use error::{Error, Result};
