//! Symbolic optimal control for vehicle routing under disturbances.
//!
//! A sampled vehicle model is abstracted onto a uniform grid, worst-case
//! reach-avoid controllers are synthesized on the abstraction, and their value
//! functions feed a capacitated routing problem. The resulting mission
//! controllers are exercised in a closed-loop simulator.

pub mod abstraction;
pub mod bounds;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod formats;
pub mod grid;
pub mod coverage;
pub mod mission;
pub mod pipeline;
pub mod reach;
pub mod routing;
pub mod scenario;
pub mod simulator;
pub mod svg;
pub mod registry;

pub use error::{Error, Result};
