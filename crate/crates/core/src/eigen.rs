//! Eigenvalues of dense real nonsymmetric matrices.
//!
//! Balancing, Householder reduction to upper Hessenberg form, then the
//! Francis implicit double-shift QR iteration with the classical exceptional
//! shifts (after 10 and 30 stalled sweeps). Follows the structure of the
//! EISPACK `balanc`/`orthes`/`hqr` routines; only eigenvalues are produced.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Maximum QR sweeps per eigenvalue before giving up.
pub const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoConvergence {
    /// Eigenvalues still unresolved when the sweep budget ran out.
    pub unresolved: usize,
    pub sweeps: usize,
}

/// Scales rows and columns by powers of two until row and column norms are
/// comparable. Similarity transform, so the spectrum is unchanged.
fn balance(h: &mut DMatrix<f64>) {
    const RADIX: f64 = 2.0;
    let n = h.nrows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += h[(j, i)].abs();
                    r += h[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = r / RADIX;
            let mut f = 1.0;
            let s = c + r;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    h[(i, j)] *= g;
                }
                for j in 0..n {
                    h[(j, i)] *= f;
                }
            }
        }
    }
}

/// In-place Householder reduction to upper Hessenberg form.
fn hessenberg(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    let mut u = vec![0.0; n];
    for m in 1..n - 1 {
        let scale: f64 = (m..n).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut sum = 0.0;
        for i in m..n {
            u[i] = h[(i, m - 1)] / scale;
            sum += u[i] * u[i];
        }
        let mut g = sum.sqrt();
        if u[m] > 0.0 {
            g = -g;
        }
        let beta = sum - u[m] * g;
        u[m] -= g;

        for j in m..n {
            let f = (m..n).map(|i| u[i] * h[(i, j)]).sum::<f64>() / beta;
            for i in m..n {
                h[(i, j)] -= f * u[i];
            }
        }
        for i in 0..n {
            let f = (m..n).map(|j| u[j] * h[(i, j)]).sum::<f64>() / beta;
            for j in m..n {
                h[(i, j)] -= f * u[j];
            }
        }
        h[(m, m - 1)] = scale * g;
        for i in m + 1..n {
            h[(i, m - 1)] = 0.0;
        }
    }
}

/// All eigenvalues of `a`, in the order they deflate (bottom of the matrix first).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, NoConvergence> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigenvalues of a non-square matrix");
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    hqr(h)
}

fn hqr(mut h: DMatrix<f64>) -> Result<Vec<Complex64>, NoConvergence> {
    let nn = h.nrows();
    let mut wr = vec![0.0; nn];
    let mut wi = vec![0.0; nn];

    let mut anorm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            anorm += h[(i, j)].abs();
        }
    }

    let mut total_sweeps = 0;
    let mut nu: isize = nn as isize - 1;
    let mut t = 0.0;
    while nu >= 0 {
        let mut its = 0;
        loop {
            let n = nu as usize;
            // Find a negligible subdiagonal element.
            let mut l = n;
            while l >= 1 {
                let mut s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                let sub = h[(l, l - 1)].abs();
                if sub <= f64::EPSILON * s || sub <= f64::EPSILON * anorm {
                    h[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }

            let x = h[(n, n)];
            if l == n {
                wr[n] = x + t;
                wi[n] = 0.0;
                nu -= 1;
                break;
            }
            let y = h[(n - 1, n - 1)];
            let w = h[(n, n - 1)] * h[(n - 1, n)];
            if l + 1 == n {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    wr[n - 1] = x + z;
                    wr[n] = if z != 0.0 { x - w / z } else { x + z };
                    wi[n - 1] = 0.0;
                    wi[n] = 0.0;
                } else {
                    wr[n - 1] = x + p;
                    wr[n] = x + p;
                    wi[n - 1] = z;
                    wi[n] = -z;
                }
                nu -= 2;
                break;
            }

            if its == MAX_SWEEPS_PER_EIGENVALUE {
                return Err(NoConvergence {
                    unresolved: n + 1,
                    sweeps: total_sweeps,
                });
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 30 {
                // Exceptional shift.
                t += x;
                for i in 0..=n {
                    h[(i, i)] -= x;
                }
                let s = h[(n, n - 1)].abs() + h[(n - 1, n - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_sweeps += 1;

            // Look for two consecutive small subdiagonal elements.
            let mut m = n - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = h[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - rr - ss;
                r = h[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = h[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=n {
                h[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // Double QR sweep on rows l..=n, columns m..=n.
            let mut k = m;
            while k < n {
                let notlast = k + 1 != n;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            h[(k, k - 1)] = -h[(k, k - 1)];
                        }
                    } else {
                        h[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=n {
                        let mut pp = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            pp += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= pp * z;
                        }
                        h[(k + 1, j)] -= pp * y;
                        h[(k, j)] -= pp * x;
                    }
                    let top = if n < k + 3 { n } else { k + 3 };
                    for i in l..=top {
                        let mut pp = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            pp += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= pp * r;
                        }
                        h[(i, k + 1)] -= pp * q;
                        h[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}
