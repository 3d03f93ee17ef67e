//! Spectrum of the generator, the operator restricted to `im A`, and the
//! Lyapunov certificate for the restricted dynamics.
//!
//! The restricted operator is expressed in a basis of `im A` that is
//! orthonormal for `<., .>_v`. In those coordinates the v-norm is the plain
//! Euclidean norm, so the certificate `P` solving `P A2 + A2^T P = -I` gives
//! `d/dt <z, P z> = -|z|^2` along `z' = A2 z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::eigen;
use crate::graph;
use crate::operator::{Generator, Weight};

/// Zero eigenvalue detection threshold, relative to `||A||_F`.
pub const ZERO_TOLERANCE: f64 = 1e-8;
/// Largest restricted dimension solved through the Kronecker system.
pub const KRONECKER_MAX_DIM: usize = 40;

/// All eigenvalues of a dense real matrix via balancing, Hessenberg
/// reduction and implicit double-shift QR.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let dim = m.nrows();
    if dim != m.ncols() {
        return Err(Error::NotSquare { rows: dim, cols: m.ncols() });
    }
    eigen::eigenvalues(m).map_err(|_| Error::EigenSolver {
        dim,
        max_iterations: eigen::MAX_SWEEPS_PER_EIGENVALUE,
    })
}

/// Largest real part over the spectrum; `-inf` for an empty matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Largest deviation after greedily pairing each element of `a` with the
/// nearest unused element of `b`. Infinite when the lengths differ.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    // Pair the most isolated values first so clusters do not steal partners.
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].re.total_cmp(&a[j].re).then(a[i].im.total_cmp(&a[j].im)));
    for i in order {
        let (best, dist) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, z)| (k, (a[i] - z).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("lengths match");
        used[best] = true;
        worst = worst.max(dist);
    }
    worst
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub eigenvalues: Vec<Complex64>,
    pub zero_index: usize,
    /// `s(A2)`: the largest real part among the nonzero eigenvalues.
    pub spectral_bound_a2: f64,
    pub lambda2: Complex64,
    /// `|Re lambda2|`, set only for symmetric interaction matrices.
    pub fiedler: Option<f64>,
    pub gershgorin_ok: bool,
    pub zero_tolerance: f64,
}

impl SpectralReport {
    /// Eigenvalues with the zero removed.
    pub fn nonzero(&self) -> Vec<Complex64> {
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != self.zero_index)
            .map(|(_, z)| *z)
            .collect()
    }
}

pub fn full_spectrum(gen: &Generator) -> Result<SpectralReport> {
    let off = gen.off_diagonal();
    let summary = graph::analyze_graph(&off, 0.0)?;
    graph::require_strong_connectivity(&summary)?;

    let n = gen.n();
    let eigs = eigenvalues(gen.matrix())?;
    let zero_tolerance = ZERO_TOLERANCE * gen.matrix().norm();

    let zero_index = (0..n)
        .min_by(|&i, &j| eigs[i].norm().total_cmp(&eigs[j].norm()))
        .ok_or(Error::Dimension { expected: 1, found: 0 })?;
    let near_zero = eigs.iter().filter(|z| z.norm() <= zero_tolerance).count();
    if near_zero != 1 {
        return Err(Error::MultipleZeroEigenvalues {
            count: near_zero,
            tolerance: zero_tolerance,
        });
    }

    let lambda2 = eigs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != zero_index)
        .map(|(_, z)| *z)
        // Prefer the upper member of a conjugate pair.
        .max_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .unwrap_or(Complex64::new(f64::NEG_INFINITY, 0.0));

    let s = gen.row_sums();
    let slack = 1e-9 * gen.matrix().norm();
    let gershgorin_ok = eigs
        .iter()
        .all(|mu| (0..n).any(|i| (mu + s[i]).norm() <= s[i] + slack));

    let symmetric = (0..n).all(|i| (0..i).all(|j| off[(i, j)] == off[(j, i)]));
    Ok(SpectralReport {
        zero_index,
        spectral_bound_a2: lambda2.re,
        lambda2,
        fiedler: symmetric.then(|| lambda2.re.abs()),
        gershgorin_ok,
        zero_tolerance,
        eigenvalues: eigs,
    })
}

/// `A` restricted to `im A`, in a v-orthonormal basis.
#[derive(Debug, Clone)]
pub struct RestrictedOperator {
    /// `n x (n - 1)`; columns are v-orthonormal and v-orthogonal to `e`.
    pub basis: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    weights: DVector<f64>,
}

impl RestrictedOperator {
    pub fn dim(&self) -> usize {
        self.a2.nrows()
    }

    /// Coordinates of `pi y` in the basis: `B^T D_v y`.
    pub fn coordinates(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.basis.nrows(), y.len())?;
        let weighted = y.component_mul(&self.weights);
        Ok(self.basis.tr_mul(&weighted))
    }

    /// `B z`, an element of `im A`.
    pub fn lift(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), z.len())?;
        Ok(&self.basis * z)
    }

    /// Max entry of `|B^T D_v B - I|` together with max `|<b_k, e>_v|`.
    pub fn orthogonality_defect(&self) -> f64 {
        orthogonality_defect(&self.basis, &self.weights)
    }

    /// Restricted operator of `A - alpha pi`, i.e. `A2 - alpha I`.
    pub fn shifted(&self, alpha: f64) -> DMatrix<f64> {
        let m = self.dim();
        &self.a2 - DMatrix::identity(m, m) * alpha
    }
}

const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;

fn orthogonality_defect(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let m = basis.ncols();
    let weighted = DMatrix::from_fn(basis.nrows(), m, |i, k| v[i] * basis[(i, k)]);
    let gram = basis.tr_mul(&weighted) - DMatrix::identity(m, m);
    let against_e = weighted.row_sum().amax();
    gram.amax().max(against_e)
}

fn v_dot(v: &DVector<f64>, x: &[f64], y: &[f64]) -> f64 {
    v.iter().zip(x).zip(y).map(|((w, a), b)| w * a * b).sum()
}

/// Modified Gram-Schmidt in `<., .>_v`, `passes` sweeps per vector.
fn v_orthonormal_basis(v: &DVector<f64>, passes: usize) -> Result<DMatrix<f64>> {
    let n = v.len();
    let m = n.saturating_sub(1);
    let e = vec![1.0; n];
    // e has unit v-norm since sum v = 1.
    let mut accepted: Vec<Vec<f64>> = vec![e];
    for i in 0..m {
        let mut x = vec![0.0; n];
        x[i] = 1.0;
        for _ in 0..passes {
            for q in &accepted {
                let c = v_dot(v, &x, q);
                x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = v_dot(v, &x, &x).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Orthogonality { defect: f64::INFINITY });
        }
        x.iter_mut().for_each(|a| *a /= norm);
        accepted.push(x);
    }
    Ok(DMatrix::from_fn(n, m, |r, c| accepted[c + 1][r]))
}

pub fn restrict_a2(gen: &Generator, v: &Weight) -> Result<RestrictedOperator> {
    check_dim(gen.n(), v.len())?;
    let w = v.vector().clone();
    let mut basis = v_orthonormal_basis(&w, 2)?;
    let mut defect = orthogonality_defect(&basis, &w);
    if defect > ORTHOGONALITY_TOLERANCE {
        log::warn!("v-orthogonality defect {defect:e}, retrying with extra sweep");
        basis = v_orthonormal_basis(&w, 3)?;
        defect = orthogonality_defect(&basis, &w);
        if defect > ORTHOGONALITY_TOLERANCE {
            return Err(Error::Orthogonality { defect });
        }
    }
    let ab = gen.matrix() * &basis;
    let weighted_ab = DMatrix::from_fn(ab.nrows(), ab.ncols(), |i, k| w[i] * ab[(i, k)]);
    let a2 = basis.tr_mul(&weighted_ab);
    Ok(RestrictedOperator { basis, a2, weights: w })
}

/// `-1/2 sum_{i,j} v_i sigma_ij (y_i - y_j)^2`, which equals `<y, A y>_v`.
pub fn dissipation_q(y: &DVector<f64>, gen: &Generator, v: &Weight) -> Result<f64> {
    check_dim(gen.n(), y.len())?;
    check_dim(gen.n(), v.len())?;
    let a = gen.matrix();
    let w = v.vector();
    let n = gen.n();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                let d = y[i] - y[j];
                row += a[(i, j)] * d * d;
            }
        }
        total += w[i] * row;
    }
    Ok(-0.5 * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovMethod {
    /// Vectorized `(I (x) A2^T + A2^T (x) I) vec P = -vec I`, dense LU.
    Kronecker,
    /// Newton iteration for the matrix sign function with determinant
    /// scaling, carrying the right-hand side along. O(m^3) per step.
    SignIteration,
}

#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub p: DMatrix<f64>,
    /// `||P A2 + A2^T P + I||_F`.
    pub residual: f64,
    pub min_eig_p: f64,
    pub lambda_max: f64,
}

pub fn solve_lyapunov(restricted: &RestrictedOperator) -> Result<LyapunovCertificate> {
    solve_lyapunov_matrix(&restricted.a2)
}

/// Picks the Kronecker system up to [`KRONECKER_MAX_DIM`], the sign iteration above.
pub fn solve_lyapunov_matrix(a2: &DMatrix<f64>) -> Result<LyapunovCertificate> {
    let method = if a2.nrows() <= KRONECKER_MAX_DIM {
        LyapunovMethod::Kronecker
    } else {
        LyapunovMethod::SignIteration
    };
    solve_lyapunov_with(a2, method)
}

pub fn solve_lyapunov_with(a2: &DMatrix<f64>, method: LyapunovMethod) -> Result<LyapunovCertificate> {
    let m = a2.nrows();
    if m != a2.ncols() {
        return Err(Error::NotSquare { rows: m, cols: a2.ncols() });
    }
    let abscissa = spectral_abscissa(a2)?;
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz { abscissa });
    }

    let p = match method {
        LyapunovMethod::Kronecker => kronecker_solve(a2)?,
        LyapunovMethod::SignIteration => sign_iteration(a2)?,
    };
    let p = (&p + p.transpose()) * 0.5;

    let residual = (&p * a2 + a2.transpose() * &p + DMatrix::identity(m, m)).norm();
    let tolerance = 1e-8 * p.norm();
    if !(residual <= tolerance) {
        return Err(Error::Residual {
            what: "Lyapunov",
            residual,
            tolerance,
        });
    }
    let eig = SymmetricEigen::new(p.clone()).eigenvalues;
    let min_eig_p = eig.min();
    let lambda_max = eig.max();
    if !(min_eig_p > 0.0) {
        return Err(Error::Residual {
            what: "Lyapunov positivity",
            residual: min_eig_p,
            tolerance: 0.0,
        });
    }
    Ok(LyapunovCertificate {
        p,
        residual,
        min_eig_p,
        lambda_max,
    })
}

fn kronecker_solve(a2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a2.nrows();
    let size = m * m;
    // Column-major vec: vec(A2^T P) = (I (x) A2^T) vec P, vec(P A2) = (A2^T (x) I) vec P.
    let mut system = DMatrix::zeros(size, size);
    for col in 0..m {
        for row in 0..m {
            let r = col * m + row;
            for k in 0..m {
                // (A2^T P)_{row,col} = sum_k A2_{k,row} P_{k,col}
                system[(r, col * m + k)] += a2[(k, row)];
                // (P A2)_{row,col} = sum_k P_{row,k} A2_{k,col}
                system[(r, k * m + row)] += a2[(k, col)];
            }
        }
    }
    let rhs = DVector::from_fn(size, |r, _| if r / m == r % m { -1.0 } else { 0.0 });
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("Kronecker Lyapunov system"))?;
    Ok(DMatrix::from_column_slice(m, m, sol.as_slice()))
}

/// Iteration cap for the sign-function route.
pub const MAX_SIGN_ITERATIONS: usize = 100;

fn sign_iteration(a2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // For Hurwitz A: A_k -> -I and Q_k -> 2P where A^T P + P A = -Q_0.
    let m = a2.nrows();
    let mut a = a2.clone();
    let mut q = DMatrix::<f64>::identity(m, m);
    for _ in 0..MAX_SIGN_ITERATIONS {
        let lu = a.clone().lu();
        let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
        let inv = lu.try_inverse().ok_or(Error::Singular("sign iteration"))?;
        let c = (-log_det / m as f64).exp();
        let next_a = (&a * c + &inv / c) * 0.5;
        q = (&q * c + inv.transpose() * &q * &inv / c) * 0.5;
        let change = (&next_a - &a).norm();
        a = next_a;
        if change <= 1e-14 * a.norm() {
            return Ok(q * 0.5);
        }
    }
    Err(Error::EigenSolver {
        dim: m,
        max_iterations: MAX_SIGN_ITERATIONS,
    })
}

/// `<z, P z>` for restricted coordinates `z`.
pub fn variance_p(z: &DVector<f64>, cert: &LyapunovCertificate) -> Result<f64> {
    check_dim(cert.p.nrows(), z.len())?;
    Ok(z.dot(&(&cert.p * z)))
}
