pub mod cli;
pub mod convex;
pub mod correlation;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod real;
pub mod refine;
pub mod rng;
pub mod selftrain;

pub use error::{Error, Result};
