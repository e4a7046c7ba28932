//! Voted conditional random fields and voted structured boosting for
//! sequence labeling, with chain-automaton inference and factor-graph
//! Rademacher complexity estimators.

pub mod automaton;
pub mod bounds;
pub mod complexity;
pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod model;
pub mod optim;
pub mod protocol;
pub mod rng;
pub mod structboost;
pub mod synthetic;
pub mod types;
pub mod vcrf;
pub mod weights;

pub use error::{Error, Result};
