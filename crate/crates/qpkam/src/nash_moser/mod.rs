//! Nash-Moser iteration for invariant tori of a toy Hamiltonian.

pub mod embedding;
pub mod inverse;
pub mod iterate;
pub mod model;
pub mod reducible;

pub use embedding::{evaluate_f, isotropic_correction, isotropy_defect_max, linearized_f, w_form, TorusEmbedding};
pub use model::{Point, Tangent, ToyFrequencies, ToyHamiltonian};
pub use inverse::{ApproxInverse, NormalSolverMode, TaylorCoefficients};
pub use reducible::{symbolic_input, ReducibleConfig};
pub use iterate::{nm_family, nm_iterate, LossConstants, NMConfig, NMFamily, NMRecord, NMRun, NMSchedule};
