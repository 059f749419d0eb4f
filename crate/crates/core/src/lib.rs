pub mod asymptotics;
pub mod bodies;
pub mod cli;
pub mod dual_measures;
pub mod error;
pub mod io;
pub mod measure_checks;
pub mod solver;
pub mod sphere_quad;

pub use error::{GdmpError, Result};
