use thiserror::Error;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Configuration,
    Connectivity,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("invalid entry {value} at ({row}, {col}): {reason}")]
    InvalidEntry {
        row: usize,
        col: usize,
        value: f64,
        reason: &'static str,
    },

    #[error(
        "interaction graph is not strongly connected: {component_count} components, closed classes {closed_classes:?}"
    )]
    NotStronglyConnected {
        component_count: usize,
        /// Members of every component, indexed by component id.
        components: Vec<Vec<usize>>,
        /// Component ids with no outgoing arcs.
        closed_classes: Vec<usize>,
    },

    #[error("classes are not autonomous: arc {from} -> {to} crosses components")]
    InterClassArcs { from: usize, to: usize },

    #[error("weight coordinate {index} = {value:e} is below positivity floor {floor:e}")]
    NumericalDegeneracy { index: usize, value: f64, floor: f64 },

    #[error("homotopy failed at lambda = {lambda}: {source}")]
    Homotopy {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("eigenvalue solver did not converge ({dim}x{dim} matrix, {max_iterations} iterations)")]
    EigenSolver { dim: usize, max_iterations: usize },

    #[error("{count} eigenvalues within {tolerance:e} of zero; graph is effectively disconnected")]
    MultipleZeroEigenvalues { count: usize, tolerance: f64 },

    #[error("v-orthonormal basis lost orthogonality: defect {defect:e}")]
    Orthogonality { defect: f64 },

    #[error("operator is not Hurwitz: spectral abscissa {abscissa:e}")]
    NotHurwitz { abscissa: f64 },

    #[error("{what} residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("integrity check '{monitor}' failed at step {step}: {detail}")]
    Integrity {
        step: usize,
        monitor: &'static str,
        detail: String,
    },

    #[error("kernel discretization violates the lower bound on S: delta_hat = {delta_hat:e}")]
    KernelConnectivity { delta_hat: f64 },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension { .. }
            | Error::NotSquare { .. }
            | Error::InvalidEntry { .. }
            | Error::Configuration(_) => ErrorKind::Configuration,
            Error::NotStronglyConnected { .. }
            | Error::InterClassArcs { .. }
            | Error::MultipleZeroEigenvalues { .. }
            | Error::KernelConnectivity { .. } => ErrorKind::Connectivity,
            Error::Homotopy { source, .. } => source.kind(),
            Error::NumericalDegeneracy { .. }
            | Error::EigenSolver { .. }
            | Error::Orthogonality { .. }
            | Error::NotHurwitz { .. }
            | Error::Residual { .. }
            | Error::Singular(_)
            | Error::Integrity { .. } => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
