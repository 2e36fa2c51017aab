//! Layered Boltzmann machines (RBM, DBM, soft-deep BM and general layer
//! topologies) with tools to analyze the piecewise-linear hard-min free energy,
//! count its linear regions, build parameterizations that reach the maximal
//! count, and train and evaluate models.

mod enumerate;
pub mod constructor;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod free_energy;
pub mod mixtures;
pub mod model;
pub mod rng;
pub mod training;

pub use enumerate::DEFAULT_CAP;

pub use error::{Error, ErrorKind, Result};
