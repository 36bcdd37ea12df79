//! Loop vertex expansion machinery for the Wick-ordered quartic scalar model
//! on finite lattices: tree enumeration, forest interpolation, multiscale
//! covariances, exact Gaussian oracles, loop vertex amplitudes, the cleaning
//! expansion and the convergence diagnostics built on them.

pub mod bounds;
pub mod cleaning;
pub mod covariance;
pub mod error;
pub mod forest;
pub mod graph;
pub mod lve;
pub mod quadrature;
pub mod wick;

pub use error::{LveError, Result};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
