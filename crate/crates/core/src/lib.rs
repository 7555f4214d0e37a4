pub mod convergence;
pub mod error;
pub mod field;
pub mod io;
pub mod multiscale;
pub mod oracles;
pub mod rof;
pub mod shrinkage;
pub mod sobolev;

pub use error::{DecompError, Result};
