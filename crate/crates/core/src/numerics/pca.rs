use super::{dot, norm2, Array, Rng};
use crate::{Error, Result};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
const START_SEED: u64 = 0x0005_eed0_f9ca;

/// Result of [`pca_project`].
#[derive(Clone, Debug)]
pub struct PcaProjection {
    /// `n x k` coordinates of the centred points in the principal basis.
    pub projections: Array,
    /// `k x d` orthonormal principal directions, one per row.
    pub components: Array,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
    /// Set when the data has rank below `k`; trailing components are zero.
    pub degenerate: bool,
    /// False if some component hit the iteration cap before converging.
    pub converged: bool,
}

/// Projects `points` (`n x d`) onto its top `k` principal directions.
///
/// Directions come from power iteration on the sample covariance, with each
/// iterate re-orthogonalised against the directions already found
/// (deflation). Rank deficiency is reported through
/// [`PcaProjection::degenerate`] rather than as an error.
pub fn pca_project(points: &Array, k: usize) -> Result<PcaProjection> {
    let [n, d] = points.dims2()?;
    if k == 0 || k > n || k > d {
        return Err(Error::InvalidArgument(format!(
            "pca needs 1 <= k <= min(n, d), got k={k} for {n}x{d}"
        )));
    }
    if !points.all_finite() {
        return Err(Error::NonFinite("pca input".into()));
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(points.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            centered[i * d + j] = points.row(i)[j] - mean[j];
        }
    }

    let denom = (n.max(2) - 1) as f64;
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let r = &centered[i * d..(i + 1) * d];
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += r[a] * r[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= denom;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let trace: f64 = (0..d).map(|a| cov[a * d + a]).sum();
    let floor = 1e-12 * trace.max(f64::MIN_POSITIVE);

    let apply = |v: &[f64], out: &mut [f64]| {
        for a in 0..d {
            out[a] = dot(&cov[a * d..(a + 1) * d], v);
        }
    };
    let orthogonalize = |v: &mut [f64], basis: &[Vec<f64>]| {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    };

    let mut rng = Rng::new(START_SEED);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    let mut degenerate = false;
    let mut converged = true;
    let mut next = vec![0.0; d];

    for _ in 0..k {
        if degenerate {
            basis.push(vec![0.0; d]);
            variances.push(0.0);
            continue;
        }
        let mut v = rng.unit_vector(d);
        orthogonalize(&mut v, &basis);
        let mut lambda = 0.0;
        let mut done = false;
        for _ in 0..POWER_MAX_ITERS {
            let nv = norm2(&v);
            if nv == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            apply(&v, &mut next);
            orthogonalize(&mut next, &basis);
            lambda = dot(&v, &next);
            let nn = norm2(&next);
            if nn <= floor {
                lambda = 0.0;
                break;
            }
            next.iter_mut().for_each(|x| *x /= nn);
            let change: f64 =
                v.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            std::mem::swap(&mut v, &mut next);
            if change < POWER_TOL {
                done = true;
                break;
            }
        }
        if lambda <= floor {
            degenerate = true;
            basis.push(vec![0.0; d]);
            variances.push(0.0);
            continue;
        }
        converged &= done;
        // exact orthonormality, whatever the iteration left behind
        orthogonalize(&mut v, &basis);
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        basis.push(v);
        variances.push(lambda);
    }

    let mut proj = Array::zeros(&[n, k]);
    for i in 0..n {
        let r = &centered[i * d..(i + 1) * d];
        for (c, b) in basis.iter().enumerate() {
            proj.set(&[i, c], dot(r, b));
        }
    }
    let components = Array::from_vec(&[k, d], basis.concat())?;
    Ok(PcaProjection { projections: proj, components, variances, degenerate, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn rank_one_line() {
        let dir = [3.0 / 5.0, 4.0 / 5.0];
        let ts = [-2.0, -0.5, 0.0, 1.0, 1.5];
        let rows: Vec<[f64; 2]> = ts.iter().map(|t| [t * dir[0], t * dir[1]]).collect();
        let p = pca_project(&Array::from_rows(&rows).unwrap(), 1).unwrap();
        let mean_t = ts.iter().sum::<f64>() / ts.len() as f64;
        let sign = p.projections.get(&[0, 0]).signum() * (ts[0] - mean_t).signum();
        for (i, t) in ts.iter().enumerate() {
            assert!((sign * p.projections.get(&[i, 0]) - (t - mean_t)).abs() < 1e-10);
        }
        assert!(!p.degenerate);
    }

    #[test]
    fn rank_deficient_flagged() {
        let rows = [[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let p = pca_project(&Array::from_rows(&rows).unwrap(), 2).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.variances[1], 0.0);
    }

    #[test]
    fn rectangle_distances_preserved() {
        let rows = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]];
        let pts = Array::from_rows(&rows).unwrap();
        let p = pca_project(&pts, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let before = dist(&rows[i], &rows[j]);
                let after = dist(p.projections.row(i), p.projections.row(j));
                assert!((before - after).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn isotropic_gaussian_balanced() {
        let mut rng = Rng::new(99);
        let pts = rng.normal_array(&[4000, 2]);
        let p = pca_project(&pts, 2).unwrap();
        // sample-covariance oracle: per-axis variance of the projections
        let var = |c: usize| {
            let col: Vec<f64> = (0..4000).map(|i| p.projections.get(&[i, c])).collect();
            let m = col.iter().sum::<f64>() / 4000.0;
            col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 3999.0
        };
        let (v0, v1) = (var(0), var(1));
        assert!((v0 - v1).abs() / v0.max(v1) < 0.10, "{v0} vs {v1}");
        assert!((v0 - p.variances[0]).abs() < 1e-9);
    }

    #[test]
    fn rejects_k_out_of_range() {
        assert!(pca_project(&Array::zeros(&[3, 2]), 0).is_err());
        assert!(pca_project(&Array::zeros(&[3, 2]), 3).is_err());
    }
}
