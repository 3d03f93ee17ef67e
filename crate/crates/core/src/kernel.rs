//! Midpoint discretization of interaction kernels on the unit cube `(0,1)^d`.
//!
//! With `N` uniform midpoint nodes and quadrature weights `1/N`, the kernel
//! `sigma(x, x*)` becomes the interaction matrix `sigma_ij = sigma(x_i, x_j) / N`
//! (diagonal dropped). The generator of that matrix equals `K - diag(S)` where
//! `K_ij = sigma(x_i, x_j) / N` keeps the diagonal and
//! `S_i = (1/N) sum_j sigma(x_i, x_j)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::{assemble_generator, compute_weight, weighted_mean, InteractionMatrix};
use crate::spectral::{self, multiset_distance};

pub type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Interaction kernel on `Omega x Omega`.
#[derive(Clone)]
pub enum Kernel {
    /// `sigma = c`.
    Constant(f64),
    /// `sigma(x, x*) = 1 + x_1`: depends on the listener only.
    ListenerOnly,
    /// `sigma(x, x*) = 1 + x_1 sin(2 pi x*_1)`, smooth and non-symmetric.
    AsymmetricSine,
    /// Periodic `h(x - x*)` with `h(r) = exp(-|r|^2 / width^2)` on the torus.
    PeriodicGaussian { width: f64 },
    /// Periodic `h(x - x*)` with `h(r) = 1 + cos(2 pi r_1) / 2 + sin(2 pi r_1) / 4`,
    /// translation invariant and non-symmetric.
    PeriodicSkew,
    /// Pre-sampled values on an `N x N` grid (rows: listener).
    Samples(DMatrix<f64>),
    Custom { name: String, f: KernelFn },
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Samples(m) => write!(f, "Samples({}x{})", m.nrows(), m.ncols()),
            Kernel::Custom { name, .. } => write!(f, "Custom({name})"),
            other => write!(f, "{}", other.name()),
        }
    }
}

impl Kernel {
    /// Builtin kernels by name. `param` feeds `constant` and `periodic_gaussian`.
    pub fn from_registry(name: &str, param: Option<f64>) -> Option<Self> {
        Some(match name {
            "constant" => Kernel::Constant(param.unwrap_or(1.0)),
            "listener_only" => Kernel::ListenerOnly,
            "asymmetric_sine" => Kernel::AsymmetricSine,
            "periodic_gaussian" => Kernel::PeriodicGaussian {
                width: param.unwrap_or(0.2),
            },
            "periodic_skew" => Kernel::PeriodicSkew,
            _ => return None,
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Kernel::Constant(_) => "constant",
            Kernel::ListenerOnly => "listener_only",
            Kernel::AsymmetricSine => "asymmetric_sine",
            Kernel::PeriodicGaussian { .. } => "periodic_gaussian",
            Kernel::PeriodicSkew => "periodic_skew",
            Kernel::Samples(_) => "samples",
            Kernel::Custom { name, .. } => name,
        }
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Constant(c) => *c,
            Kernel::ListenerOnly => 1.0 + x[0],
            Kernel::AsymmetricSine => 1.0 + x[0] * (2.0 * PI * y[0]).sin(),
            Kernel::PeriodicGaussian { width } => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| torus_offset(a - b).powi(2)).sum();
                (-r2 / (width * width)).exp()
            }
            Kernel::PeriodicSkew => {
                let r = x[0] - y[0];
                1.0 + 0.5 * (2.0 * PI * r).cos() + 0.25 * (2.0 * PI * r).sin()
            }
            Kernel::Custom { f, .. } => f(x, y),
            Kernel::Samples(_) => unreachable!("samples are read directly"),
        }
    }
}

/// Signed offset folded into `[-1/2, 1/2)`.
fn torus_offset(r: f64) -> f64 {
    r - (r + 0.5).floor()
}

/// Uniform midpoint nodes in `(0,1)^d`; `n` must be a perfect `d`-th power.
pub fn midpoint_nodes(n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if !(1..=2).contains(&d) {
        return Err(Error::Configuration(format!("dimension d = {d} not supported (1 or 2)")));
    }
    let per_axis = if d == 1 { n } else { (n as f64).sqrt().round() as usize };
    if per_axis.pow(d as u32) != n {
        return Err(Error::Configuration(format!("N = {n} is not a perfect power for d = {d}")));
    }
    let h = 1.0 / per_axis as f64;
    Ok((0..n)
        .map(|k| {
            let mut idx = k;
            (0..d)
                .map(|_| {
                    let c = idx % per_axis;
                    idx /= per_axis;
                    (c as f64 + 0.5) * h
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct KernelGrid {
    pub d: usize,
    pub nodes: Vec<Vec<f64>>,
    pub sigma_samples: DMatrix<f64>,
    /// `(1/N) sum_j sigma(x_i, x_j)`, diagonal included.
    pub s_values: DVector<f64>,
    pub delta_hat: f64,
}

impl KernelGrid {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// `K_ij = sigma(x_i, x_j) / N`, diagonal kept.
    pub fn quadrature_matrix(&self) -> DMatrix<f64> {
        &self.sigma_samples / self.n() as f64
    }

    pub fn interaction_matrix(&self) -> Result<InteractionMatrix> {
        InteractionMatrix::new(self.quadrature_matrix())
    }

    /// `-delta_hat`, an upper bound for the essential part of the continuum
    /// spectrum.
    pub fn essential_bound(&self) -> f64 {
        -self.delta_hat
    }
}

pub fn sample_kernel(kernel: &Kernel, n: usize, d: usize) -> Result<KernelGrid> {
    if n < 2 {
        return Err(Error::Configuration(format!("kernel grid needs N >= 2, got {n}")));
    }
    let nodes = midpoint_nodes(n, d)?;
    let sigma_samples = match kernel {
        Kernel::Samples(m) => {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: m.nrows(),
                });
            }
            m.clone()
        }
        k => DMatrix::from_fn(n, n, |i, j| k.eval(&nodes[i], &nodes[j])),
    };
    for i in 0..n {
        for j in 0..n {
            let value = sigma_samples[(i, j)];
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidEntry {
                    row: i,
                    col: j,
                    value,
                    reason: "kernel samples must be finite and nonnegative",
                });
            }
        }
    }
    let s_values = DVector::from_fn(n, |i, _| sigma_samples.row(i).sum() / n as f64);
    let delta_hat = s_values.min();
    Ok(KernelGrid {
        d,
        nodes,
        sigma_samples,
        s_values,
        delta_hat,
    })
}

/// Interaction matrix `sigma_ij = sigma(x_i, x_j) / N` on a 1-d midpoint grid.
pub fn discretize(kernel: &Kernel, n: usize) -> Result<InteractionMatrix> {
    discretize_grid(&sample_kernel(kernel, n, 1)?)
}

pub fn discretize_grid(grid: &KernelGrid) -> Result<InteractionMatrix> {
    if !(grid.delta_hat > 0.0) {
        return Err(Error::KernelConnectivity {
            delta_hat: grid.delta_hat,
        });
    }
    grid.interaction_matrix()
}

#[derive(Debug, Clone)]
pub struct ConstantSReport {
    /// `false` when S is not constant and the check was skipped.
    pub applicable: bool,
    pub s_spread: f64,
    pub delta: f64,
    /// Greedy-matching distance between `spectrum(A)` and `spectrum(K) - delta`.
    pub mismatch: Option<f64>,
    pub passed: bool,
    pub note: String,
}

pub const CONSTANT_S_TOLERANCE: f64 = 1e-8;

/// When `S` is constant, `A = K - delta I`, so the spectra differ by a shift.
pub fn constant_s_check(grid: &KernelGrid) -> Result<ConstantSReport> {
    let delta = grid.s_values.mean();
    let spread = grid.s_values.max() - grid.s_values.min();
    if spread > CONSTANT_S_TOLERANCE * delta.abs().max(f64::MIN_POSITIVE) {
        return Ok(ConstantSReport {
            applicable: false,
            s_spread: spread,
            delta,
            mismatch: None,
            passed: false,
            note: format!("S is not constant (spread {spread:e}); check skipped"),
        });
    }
    let k = grid.quadrature_matrix();
    let gen = assemble_generator(&grid.interaction_matrix()?);
    let shifted: Vec<_> = spectral::eigenvalues(&k)?.into_iter().map(|z| z - delta).collect();
    let mismatch = multiset_distance(&spectral::eigenvalues(gen.matrix())?, &shifted);
    let passed = mismatch <= CONSTANT_S_TOLERANCE;
    Ok(ConstantSReport {
        applicable: true,
        s_spread: spread,
        delta,
        mismatch: Some(mismatch),
        passed,
        note: format!("spectrum(A) vs spectrum(K) - {delta}: max deviation {mismatch:e}"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementRow {
    pub n: usize,
    pub consensus: f64,
    pub s_a2: f64,
    pub delta_hat: f64,
}

/// Consensus value of `y_in(x)`, `s(A2)` and `delta_hat` on each grid size.
pub fn refinement_study(
    kernel: &Kernel,
    n_list: &[usize],
    y_in: impl Fn(&[f64]) -> f64,
) -> Result<Vec<RefinementRow>> {
    if n_list.len() < 3 {
        return Err(Error::Configuration(format!(
            "refinement study needs at least 3 grid sizes, got {}",
            n_list.len()
        )));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Configuration("grid sizes must be increasing".into()));
    }
    n_list
        .iter()
        .map(|&n| {
            let grid = sample_kernel(kernel, n, 1)?;
            let sigma = discretize_grid(&grid)?;
            let gen = assemble_generator(&sigma);
            let weight = compute_weight(&gen)?;
            let report = spectral::full_spectrum(&gen)?;
            let y = DVector::from_iterator(n, grid.nodes.iter().map(|x| y_in(x)));
            Ok(RefinementRow {
                n,
                consensus: weighted_mean(&y, &weight)?,
                s_a2: report.spectral_bound_a2,
                delta_hat: grid.delta_hat,
            })
        })
        .collect()
}
