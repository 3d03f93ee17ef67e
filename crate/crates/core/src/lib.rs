//! Analysis and simulation of linear consensus dynamics `y' = A y` driven by a
//! non-symmetric interaction matrix.
//!
//! - [`eigen`]: eigenvalues of dense nonsymmetric matrices.
//! - [`graph`]: strong connectivity and communicating classes.
//! - [`operator`]: the generator, its positive conserved weight, and the
//!   weighted inner product geometry.
//! - [`spectral`]: spectrum, the operator restricted to `im A`, the decay rate
//!   `s(A2)` and the Lyapunov certificate.
//! - [`dynamics`]: RK4 and discrete-time runs with monitors, feedback
//!   control, clustering, and decay fits.
//! - [`kernel`]: midpoint discretization of continuum interaction kernels.

pub mod eigen;
pub mod error;
pub mod graph;
pub mod operator;
pub mod spectral;
pub mod dynamics;
pub mod kernel;

pub use error::{Error, ErrorKind, Result};
