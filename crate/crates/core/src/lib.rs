pub mod dual;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod mtfa;
pub mod recovery;
pub mod report;
pub mod simulator;

pub use error::{Error, Result};
pub use linalg::{Mat, SpectralDecomposition, SymMat};
