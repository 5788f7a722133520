//! Dense symmetric linear algebra kernels.

mod cholesky;
mod dense;
mod eigen;
mod lstsq;
mod symmat;

pub use cholesky::Cholesky;
pub use dense::Mat;
pub use eigen::{eig_sym, SpectralDecomposition, SWEEPS_PER_DIM};
pub use lstsq::{lstsq_min_norm, LstsqSolution};
pub use symmat::{rank_of_spectrum, SymMat, RANK_EPS_FLOOR};
