//! Generator assembly, the positive conserved weight, and the weighted
//! Hilbert geometry it induces.
//!
//! For an interaction matrix `sigma` the generator is
//! `A = sigma - diag(sigma e)`, so every row of `A` sums to zero and
//! `A e = 0`. When the interaction graph is strongly connected, `ker A^T` is
//! spanned by a single vector `v` with strictly positive coordinates. With the
//! normalization `sum v_i = 1`, the weighted mean `<y, v>` is conserved by
//! `y' = A y`, and `<y, z>_v = sum v_i y_i z_i` is the inner product in which
//! the dynamics dissipate.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::graph;

/// Nonnegative off-diagonal matrix of pairwise interaction frequencies.
///
/// The diagonal is zeroed on construction: self-interaction does not enter the
/// dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    entries: DMatrix<f64>,
}

impl InteractionMatrix {
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = entries.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        for i in 0..rows {
            for j in 0..cols {
                let value = entries[(i, j)];
                if !value.is_finite() {
                    return Err(Error::InvalidEntry {
                        row: i,
                        col: j,
                        value,
                        reason: "entries must be finite",
                    });
                }
                if i != j && value < 0.0 {
                    return Err(Error::InvalidEntry {
                        row: i,
                        col: j,
                        value,
                        reason: "off-diagonal entries must be nonnegative",
                    });
                }
            }
            entries[(i, i)] = 0.0;
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            check_dim(n, row.len())?;
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn is_symmetric(&self, tolerance: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| (self.entries[(i, j)] - self.entries[(j, i)]).abs() <= tolerance))
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.entries * factor)
    }

    /// Relabels agents: new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_dim(self.n(), perm.len())?;
        Self::new(DMatrix::from_fn(self.n(), self.n(), |i, j| {
            self.entries[(perm[i], perm[j])]
        }))
    }

    /// Principal submatrix on the given agents, in the given order.
    pub fn restrict(&self, agents: &[usize]) -> Result<Self> {
        let k = agents.len();
        Self::new(DMatrix::from_fn(k, k, |i, j| self.entries[(agents[i], agents[j])]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    a: DMatrix<f64>,
    row_sums: DVector<f64>,
}

impl Generator {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `S_i = sum_{j != i} sigma_ij`.
    pub fn row_sums(&self) -> &DVector<f64> {
        &self.row_sums
    }

    /// Off-diagonal part, i.e. the interaction matrix this generator came from.
    pub fn off_diagonal(&self) -> DMatrix<f64> {
        let mut m = self.a.clone();
        m.fill_diagonal(0.0);
        m
    }

    /// Max absolute row sum, `2 max_i S_i`.
    pub fn inf_norm(&self) -> f64 {
        self.row_sums.iter().copied().fold(0.0, f64::max) * 2.0
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.a * y
    }
}

pub fn assemble_generator(sigma: &InteractionMatrix) -> Generator {
    let n = sigma.n();
    let s = sigma.matrix();
    let mut a = s.clone();
    let mut row_sums = DVector::zeros(n);
    for i in 0..n {
        let total: f64 = (0..n).filter(|&j| j != i).map(|j| s[(i, j)]).sum();
        row_sums[i] = total;
        a[(i, i)] = -total;
    }
    Generator { a, row_sums }
}

/// Positive element of `ker A^T`, normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    v: DVector<f64>,
    residual: f64,
}

impl Weight {
    /// Wraps an externally supplied weight. Coordinates must be positive and
    /// sum to one within `1e-12`.
    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        for (i, &x) in v.iter().enumerate() {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::InvalidEntry {
                    row: i,
                    col: 0,
                    value: x,
                    reason: "weight coordinates must be positive",
                });
            }
        }
        let total = v.sum();
        if (total - 1.0).abs() > 1e-12 * v.len() as f64 {
            return Err(Error::Configuration(format!(
                "weight must sum to 1, sums to {total}"
            )));
        }
        Ok(Self { v, residual: f64::NAN })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            v: DVector::from_element(n, 1.0 / n as f64),
            residual: 0.0,
        }
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// `||A^T v||_2` at solve time; NaN when the weight was supplied externally.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn min(&self) -> f64 {
        self.v.min()
    }

    pub fn max(&self) -> f64 {
        self.v.max()
    }
}

/// Linear solve used for the weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMethod {
    /// Least squares on the bordered system `[A^T; e^T] v = [0; 1]` via QR.
    #[default]
    BorderedQr,
    /// Square system: row `row` of `A^T v = 0` replaced by `e^T v = 1`,
    /// solved with fully pivoted LU.
    ReplacedRowLu { row: usize },
}

/// Relative positivity floor: coordinates at or below
/// `POSITIVITY_FLOOR * max(v)` are rejected.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

pub fn compute_weight(gen: &Generator) -> Result<Weight> {
    compute_weight_with(gen, WeightMethod::BorderedQr)
}

pub fn compute_weight_with(gen: &Generator, method: WeightMethod) -> Result<Weight> {
    let summary = graph::analyze_graph(&gen.off_diagonal(), 0.0)?;
    graph::require_strong_connectivity(&summary)?;

    let n = gen.n();
    let at = gen.matrix().transpose();
    let v = match method {
        WeightMethod::BorderedQr => {
            let mut bordered = DMatrix::zeros(n + 1, n);
            bordered.view_mut((0, 0), (n, n)).copy_from(&at);
            bordered.row_mut(n).fill(1.0);
            let mut rhs = DVector::zeros(n + 1);
            rhs[n] = 1.0;
            let qr = bordered.qr();
            let qtb = qr.q().transpose() * rhs;
            qr.r()
                .solve_upper_triangular(&qtb)
                .ok_or(Error::Singular("bordered weight system"))?
        }
        WeightMethod::ReplacedRowLu { row } => {
            if row >= n {
                return Err(Error::Dimension { expected: n, found: row });
            }
            let mut m = at.clone();
            m.row_mut(row).fill(1.0);
            let mut rhs = DVector::zeros(n);
            rhs[row] = 1.0;
            m.full_piv_lu()
                .solve(&rhs)
                .ok_or(Error::Singular("replaced-row weight system"))?
        }
    };
    finish_weight(gen, v)
}

fn finish_weight(gen: &Generator, v: DVector<f64>) -> Result<Weight> {
    let floor = POSITIVITY_FLOOR * v.max().abs();
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, &x)| !(x > floor)) {
        return Err(Error::NumericalDegeneracy { index, value, floor });
    }
    // Renormalize to remove least-squares drift in the sum.
    let v = &v / v.sum();
    let residual = (gen.matrix().transpose() * &v).norm();
    Ok(Weight { v, residual })
}

#[derive(Debug, Clone)]
pub struct HomotopyPath {
    pub lambda_grid: Vec<f64>,
    pub weights: Vec<Weight>,
    pub min_coordinate: Vec<f64>,
}

pub const DEFAULT_HOMOTOPY_GRID: usize = 101;

/// Weights along `sigma_lambda = lambda sigma + (1 - lambda) M`, where `M` is
/// the constant matrix holding the largest entry of `sigma`.
pub fn weight_homotopy_path(sigma: &InteractionMatrix, grid_size: usize) -> Result<HomotopyPath> {
    if grid_size < 2 {
        return Err(Error::Configuration(format!(
            "homotopy grid needs at least 2 points, got {grid_size}"
        )));
    }
    let summary = graph::analyze_graph(sigma.matrix(), 0.0)?;
    graph::require_strong_connectivity(&summary)?;

    let n = sigma.n();
    let top = sigma.max_entry();
    let mut path = HomotopyPath {
        lambda_grid: Vec::with_capacity(grid_size),
        weights: Vec::with_capacity(grid_size),
        min_coordinate: Vec::with_capacity(grid_size),
    };
    for k in 0..grid_size {
        let lambda = k as f64 / (grid_size - 1) as f64;
        let blended = DMatrix::from_fn(n, n, |i, j| {
            lambda * sigma.matrix()[(i, j)] + (1.0 - lambda) * top
        });
        let weight = InteractionMatrix::new(blended)
            .map(|s| assemble_generator(&s))
            .and_then(|g| compute_weight(&g))
            .map_err(|e| Error::Homotopy {
                lambda,
                source: Box::new(e),
            })?;
        path.lambda_grid.push(lambda);
        path.min_coordinate.push(weight.min());
        path.weights.push(weight);
    }
    Ok(path)
}

pub fn weighted_inner(y: &DVector<f64>, z: &DVector<f64>, v: &Weight) -> Result<f64> {
    check_dim(v.len(), y.len())?;
    check_dim(v.len(), z.len())?;
    Ok(v.v.iter().zip(y.iter()).zip(z.iter()).map(|((w, a), b)| w * a * b).sum())
}

/// `<y, v>`, the conserved consensus value.
pub fn weighted_mean(y: &DVector<f64>, v: &Weight) -> Result<f64> {
    check_dim(v.len(), y.len())?;
    Ok(y.dot(&v.v))
}

/// v-orthogonal projection onto `im A`: `y - <y, e>_v e`.
pub fn project_pi(y: &DVector<f64>, v: &Weight) -> Result<DVector<f64>> {
    let mean = weighted_mean(y, v)?;
    Ok(y.map(|x| x - mean))
}

/// `sum_i v_i (y_i - <y, v>)^2`.
pub fn weighted_variance(y: &DVector<f64>, v: &Weight) -> Result<f64> {
    let mean = weighted_mean(y, v)?;
    Ok(v.v.iter().zip(y.iter()).map(|(w, x)| w * (x - mean) * (x - mean)).sum())
}
