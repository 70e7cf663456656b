pub mod detection;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod optimizer;
pub mod physics;
pub mod pulse;
pub mod solver;

pub use error::{Error, ErrorKind, Result};
