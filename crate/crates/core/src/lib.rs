//! Non-commutative convolutional signal models and algebraic neural networks.
//!
//! Filters are polynomials in non-commuting generators ([`ncpoly`]),
//! realized on concrete shift operators ([`asm`]). The crate decomposes
//! shift sets into invariant blocks ([`spectral`]), certifies Lipschitz and
//! integral-Lipschitz constants of filters ([`lipconst`]), perturbs shifts
//! with the affine model `T(S) = T₀ + T₁S` ([`perturb`]), checks the
//! resulting stability bounds ([`stability`]) and trains small layered
//! networks with an integral-Lipschitz penalty ([`algnn`]) on multigraphs
//! built from rating data ([`dataio`]).

pub mod algnn;
pub mod asm;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod lipconst;
pub mod ncpoly;
pub mod perturb;
pub mod rng;
pub mod spectral;
pub mod stability;

pub use asm::{FilterOperator, ShiftSet, Signal};
pub use error::{Error, Result};
pub use ncpoly::{NcPolynomial, Word};
pub use spectral::SpectralDecomposition;

/// Version string embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
