use super::Array;
use crate::{Error, Result};

/// Largest matrix accepted by [`sym_eigenvalues`].
pub const MAX_EIGEN_DIM: usize = 512;
const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues of a real symmetric matrix, ascending.
///
/// Cyclic Jacobi: every sweep visits each `(p, q)` pair above the diagonal
/// and applies the rotation that annihilates `a[p][q]`. Iteration stops once
/// the off-diagonal Frobenius norm drops below `1e-12` (scaled by the
/// matrix norm when that exceeds one).
pub fn sym_eigenvalues(a: &Array) -> Result<Vec<f64>> {
    let [n, m] = a.dims2()?;
    if n != m {
        return Err(Error::Shape(format!("eigenvalues need a square matrix, got {n}x{m}")));
    }
    if n > MAX_EIGEN_DIM {
        return Err(Error::InvalidArgument(format!(
            "matrix order {n} exceeds the supported {MAX_EIGEN_DIM}"
        )));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("eigenvalue input".into()));
    }
    let scale = a.max_abs().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a.get(&[i, j]) - a.get(&[j, i])).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }

    // symmetrise to kill sub-tolerance asymmetry
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = 0.5 * (a.get(&[i, j]) + a.get(&[j, i]));
        }
    }
    let frob = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * frob.max(1.0);

    let off_norm = |w: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += w[i * n + j] * w[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&w) >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut w, n, p, q);
            }
        }
        sweeps += 1;
    }

    let mut eig: Vec<f64> = (0..n).map(|i| w[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

fn rotate(w: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = w[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = w[p * n + p];
    let aqq = w[q * n + q];
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // W <- W J
    for k in 0..n {
        let wkp = w[k * n + p];
        let wkq = w[k * n + q];
        w[k * n + p] = c * wkp - s * wkq;
        w[k * n + q] = s * wkp + c * wkq;
    }
    // W <- J^T W
    for k in 0..n {
        let wpk = w[p * n + k];
        let wqk = w[q * n + k];
        w[p * n + k] = c * wpk - s * wqk;
        w[q * n + k] = s * wpk + c * wqk;
    }
    w[p * n + q] = 0.0;
    w[q * n + p] = 0.0;
}
