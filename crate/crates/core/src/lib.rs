//! Pre-orthogonal adaptive Fourier decomposition of random boundary data and
//! its lift to harmonic and heat solutions.
//!
//! The boundary is either the unit circle (Poisson kernel dictionary) or the
//! real line (Gaussian heat kernel dictionary). A random boundary function is
//! expanded in an orthonormal system built greedily from multiple kernels, and
//! every term is lifted to the interior through the kernels' semigroup
//! property.

// `!(x > 0.0)` style guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod dd;
pub mod discretize;
pub mod error;
pub mod kernels;
pub mod lift;
pub mod poafd;
pub mod spoafd;

pub use discretize::{BoundaryGrid, DensityQuadrature, DensitySpec};
pub use error::{Error, Result};
pub use kernels::{Atom, Family, KernelParam, Point};
pub use lift::SolutionField;
pub use poafd::{CandidateSet, CandidateSpec, DecomposeOptions, Expansion, OrthoSystem, Termination};
pub use spoafd::{StochasticExpansion, StochasticSignal};
