//! Numerical reducibility and KAM machinery for quasi-periodically forced
//! Hamiltonian PDEs on the circle: truncated quasi-periodic function spaces,
//! pseudo-differential symbols and operator families, transport flows and
//! Egorov expansions, the regularisation pipeline, KAM diagonalisation, a
//! Nash-Moser solver for a toy Hamiltonian and measure estimates of the
//! surviving frequencies.

pub mod algebra;
pub mod cli;
pub mod error;
pub mod expr;
pub mod fft;
pub mod jet;
pub mod kam;
pub mod linalg;
pub mod measure;
pub mod nash_moser;
pub mod quad;
pub mod reduction;
pub mod transport;
pub mod spaces;

pub use error::{Error, Result};
