pub mod boundary_stats;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod fractal_dim;
pub mod grid;
pub mod io_store;
pub mod ode;
pub mod profiles;
pub mod sim;
pub mod spectral;
pub mod stats;

pub use error::{LabError, Result};
pub use grid::GridFunction;
