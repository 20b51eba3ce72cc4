//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAGONAL_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    /// One unit-norm column per eigenvalue.
    pub eigenvectors: Matrix,
    pub sweeps: usize,
}

impl EigenResult {
    pub fn eigenvector(&self, j: usize) -> Vec<f64> {
        (0..self.eigenvectors.rows())
            .map(|i| self.eigenvectors[(i, j)])
            .collect()
    }
}

/// The `k` smallest eigenpairs of the symmetric matrix `a`.
///
/// Sweeps stop once the off-diagonal Frobenius norm falls below `1e-10`
/// (scaled by `max(1, ‖A‖_F)`) or after 100 sweeps. Each eigenvector is signed
/// so that its largest-magnitude component is positive.
pub fn symmetric_eigen(a: &Matrix, k: usize) -> Result<EigenResult> {
    let n = a.rows();
    if a.rows() != a.cols() {
        return Err(Error::validation(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "requested {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::validation(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }

    // Work on the symmetrized copy so tiny asymmetries never accumulate.
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let threshold = OFF_DIAGONAL_TOL * a.frobenius_norm().max(1.0);

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && off_diagonal_norm(&m) >= threshold {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]).then(i.cmp(&j)));
    order.truncate(k);

    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, k);
    for (col, &src) in order.iter().enumerate() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for r in 0..n {
            let x = v[(r, src)];
            if x.abs() > best + 1e-12 {
                best = x.abs();
                sign = x.signum();
            }
        }
        for r in 0..n {
            vectors[(r, col)] = sign * v[(r, src)];
        }
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors: vectors,
        sweeps,
    })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m[(i, j)] * m[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Applies the Jacobi rotation zeroing `m[p][q]` to both `m` and the accumulated basis `v`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let apq = m[(p, q)];
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = m[(r, p)];
        let arq = m[(r, q)];
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        m[(r, p)] = new_rp;
        m[(p, r)] = new_rp;
        m[(r, q)] = new_rq;
        m[(q, r)] = new_rq;
    }
    m[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    m[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}
