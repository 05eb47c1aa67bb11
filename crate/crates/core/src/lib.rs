//! Differentiable digital twin of a WDM optical network.

pub mod adam;
pub mod diff;
pub mod edfa;
pub mod field_sim;
pub mod error;
pub mod fiber;
pub mod grid;
pub mod io;
pub mod link;
pub mod opt;
pub mod scenario;
pub mod topology;
pub mod train;
pub mod trx;

pub use error::{Error, Result};
