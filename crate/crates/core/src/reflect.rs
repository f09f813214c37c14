//! Householder reflections: general, 2D closed form, block-wise, global.
//!
//! The 2D reflection parameterised by an angle `theta` is
//!
//! ```text
//! R(theta) = [[cos 2theta,  sin 2theta],
//!             [sin 2theta, -cos 2theta]]
//! ```
//!
//! which mirrors across the line through the origin at angle `theta`. Its
//! Householder normal is `[-sin theta, cos theta]`, so
//! `R(theta) == householder_matrix([-sin theta, cos theta])` and
//! `R(theta) == -householder_matrix([cos theta, sin theta])`.

use crate::numerics::{dot, norm2, Array};
use crate::{Error, Result};

/// Mirror vectors with a norm at or below this are rejected.
pub const MIN_MIRROR_NORM: f64 = 1e-12;

/// Learnable base angles `theta[h][m]`, one per head and 2D block.
#[derive(Clone, Debug, PartialEq)]
pub struct MirrorAngles {
    theta: Array,
}

impl MirrorAngles {
    /// `theta` must be `[heads, blocks]` and finite. Values are not wrapped.
    pub fn new(theta: Array) -> Result<Self> {
        if theta.ndim() != 2 {
            return Err(Error::Shape(format!(
                "mirror angles must be [heads, blocks], got {:?}",
                theta.shape()
            )));
        }
        if !theta.all_finite() {
            return Err(Error::NonFinite("mirror angles".into()));
        }
        Ok(Self { theta })
    }

    pub fn heads(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn blocks(&self) -> usize {
        self.theta.shape()[1]
    }

    pub fn as_array(&self) -> &Array {
        &self.theta
    }

    pub fn into_array(self) -> Array {
        self.theta
    }
}

/// Cross-head mirror direction `u_c`, stored unnormalised.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMirror {
    u: Array,
}

impl GlobalMirror {
    pub fn new(u: Array) -> Result<Self> {
        if u.ndim() != 1 {
            return Err(Error::Shape(format!("global mirror must be 1-D, got {:?}", u.shape())));
        }
        if !u.all_finite() {
            return Err(Error::NonFinite("global mirror".into()));
        }
        let n = norm2(u.data());
        if n <= MIN_MIRROR_NORM {
            return Err(Error::DegenerateMirror(n));
        }
        Ok(Self { u })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn norm(&self) -> f64 {
        norm2(self.u.data())
    }

    pub fn unit(&self) -> Vec<f64> {
        let n = self.norm();
        self.u.data().iter().map(|x| x / n).collect()
    }

    pub fn as_array(&self) -> &Array {
        &self.u
    }

    pub fn into_array(self) -> Array {
        self.u
    }
}

/// `I - 2 u u^T / |u|^2`.
pub fn householder_matrix(u: &[f64]) -> Result<Array> {
    let nn = dot(u, u);
    if nn.sqrt() <= MIN_MIRROR_NORM {
        return Err(Error::DegenerateMirror(nn.sqrt()));
    }
    let d = u.len();
    let mut h = Array::identity(d);
    for i in 0..d {
        for j in 0..d {
            let off = h.offset(&[i, j]);
            h.data_mut()[off] -= 2.0 * u[i] * u[j] / nn;
        }
    }
    Ok(h)
}

/// Closed-form 2D reflection across the line at angle `theta`.
pub fn householder_2d(theta: f64) -> Array {
    let (s, c) = (2.0 * theta).sin_cos();
    Array::from_vec(&[2, 2], vec![c, s, s, -c]).expect("2x2")
}

/// Applies `R(theta)` to one block without materialising the matrix.
#[inline]
pub fn reflect_pair(theta: f64, x1: f64, x2: f64) -> (f64, f64) {
    let (s, c) = (2.0 * theta).sin_cos();
    (x1 * c + x2 * s, x1 * s - x2 * c)
}

/// Block-wise reflection of a `[B, H, N, D]` tensor.
///
/// Block `m` holds coordinates `(2m, 2m + 1)`. `angles` is either
/// `[H, D/2]` (shared across the batch) or `[B, H, D/2]`.
pub fn reflect_blocks(x: &Array, angles: &Array) -> Result<Array> {
    let [b, h, n, d] = dims4(x)?;
    if d % 2 != 0 {
        return Err(Error::OddDimension(d));
    }
    let m = d / 2;
    let batched = match angles.shape() {
        [ah, am] if *ah == h && *am == m => false,
        [ab, ah, am] if *ab == b && *ah == h && *am == m => true,
        s => {
            return Err(Error::Shape(format!(
                "angles {s:?} do not broadcast against [{b}, {h}, {n}, {d}]"
            )))
        }
    };
    let mut out = x.clone();
    let ad = angles.data();
    for bi in 0..b {
        for hi in 0..h {
            let base = if batched { (bi * h + hi) * m } else { hi * m };
            let trig: Vec<(f64, f64)> =
                ad[base..base + m].iter().map(|t| (2.0 * t).sin_cos()).collect();
            for t in 0..n {
                let off = ((bi * h + hi) * n + t) * d;
                let row = &mut out.data_mut()[off..off + d];
                for (blk, &(s, c)) in row.chunks_exact_mut(2).zip(&trig) {
                    let (x1, x2) = (blk[0], blk[1]);
                    blk[0] = x1 * c + x2 * s;
                    blk[1] = x1 * s - x2 * c;
                }
            }
        }
    }
    Ok(out)
}

/// Reflects every row (last axis) of `x` through the hyperplane normal to `u`:
/// `y = x - 2 u_hat <x, u_hat>`.
pub fn global_reflect(x: &Array, u: &GlobalMirror) -> Result<Array> {
    let width = *x.shape().last().expect("non-empty shape");
    if width != u.dim() {
        return Err(Error::Shape(format!(
            "row width {width} does not match mirror dimension {}",
            u.dim()
        )));
    }
    let unit = u.unit();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(width) {
        let p = 2.0 * dot(row, &unit);
        row.iter_mut().zip(&unit).for_each(|(r, w)| *r -= p * w);
    }
    Ok(out)
}

pub(crate) fn dims4(x: &Array) -> Result<[usize; 4]> {
    match x.shape() {
        &[b, h, n, d] => Ok([b, h, n, d]),
        s => Err(Error::Shape(format!("expected a [B, H, N, D] tensor, got {s:?}"))),
    }
}

pub(crate) fn dims3(x: &Array) -> Result<[usize; 3]> {
    match x.shape() {
        &[b, n, f] => Ok([b, n, f]),
        s => Err(Error::Shape(format!("expected a [B, N, F] tensor, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matmul;
    use crate::Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn close(a: &Array, b: &[f64], tol: f64) -> bool {
        a.data().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn axis_reflection() {
        let h = householder_matrix(&[1.0, 0.0]).unwrap();
        assert!(close(&h, &[-1.0, 0.0, 0.0, 1.0], 0.0));
    }

    #[test]
    fn diagonal_mirror() {
        let h = householder_matrix(&[1.0, 1.0]).unwrap();
        assert!(close(&h, &[0.0, -1.0, -1.0, 0.0], 1e-15));
    }

    #[test]
    fn random_householder_is_orthogonal_symmetric() {
        let mut rng = Rng::new(5);
        let u = rng.normal_vec(5);
        let h = householder_matrix(&u).unwrap();
        let hth = matmul(&h.transpose().unwrap(), &h).unwrap();
        assert!(hth.max_abs_diff(&Array::identity(5)) <= 1e-12);
        assert!(h.max_abs_diff(&h.transpose().unwrap()) == 0.0);
    }

    #[test]
    fn near_zero_mirror_rejected() {
        assert!(matches!(householder_matrix(&[1e-13, 0.0]), Err(Error::DegenerateMirror(_))));
        let z = Array::from_vec(&[3], vec![0.0; 3]).unwrap();
        assert!(matches!(GlobalMirror::new(z), Err(Error::DegenerateMirror(_))));
    }

    #[test]
    fn closed_form_values() {
        assert!(close(&householder_2d(0.0), &[1.0, 0.0, 0.0, -1.0], 1e-15));
        assert!(close(&householder_2d(FRAC_PI_4), &[0.0, 1.0, 1.0, 0.0], 1e-15));
        assert!(close(&householder_2d(FRAC_PI_2), &[-1.0, 0.0, 0.0, 1.0], 1e-15));
    }

    #[test]
    fn closed_form_matches_general_householder() {
        let mut rng = Rng::new(17);
        for _ in 0..100 {
            let t = rng.uniform_range(-10.0, 10.0);
            let r = householder_2d(t);
            let normal = householder_matrix(&[-t.sin(), t.cos()]).unwrap();
            assert!(r.max_abs_diff(&normal) <= 1e-12);
            let along = householder_matrix(&[t.cos(), t.sin()]).unwrap();
            assert!(r.max_abs_diff(&along.scale(-1.0)) <= 1e-12);
        }
    }

    #[test]
    fn block_examples() {
        let x = Array::from_vec(&[1, 1, 1, 2], vec![0.7, 0.3]).unwrap();
        let y = reflect_blocks(&x, &Array::zeros(&[1, 1])).unwrap();
        assert_eq!(y.data(), &[0.7, -0.3]);

        let x = Array::from_vec(&[1, 1, 1, 2], vec![1.0, -1.0]).unwrap();
        let y = reflect_blocks(&x, &Array::filled(&[1, 1], FRAC_PI_4)).unwrap();
        assert!(close(&y, &[-1.0, 1.0], 1e-15));
    }

    #[test]
    fn blocks_agree_with_matrix_form() {
        let mut rng = Rng::new(23);
        let x = rng.normal_array(&[2, 3, 4, 6]);
        let ang = rng.uniform_array(&[2, 3, 3], -4.0, 4.0);
        let y = reflect_blocks(&x, &ang).unwrap();
        for b in 0..2 {
            for h in 0..3 {
                for t in 0..4 {
                    for m in 0..3 {
                        let r = householder_2d(ang.get(&[b, h, m]));
                        let xb = Array::from_vec(
                            &[2, 1],
                            vec![x.get(&[b, h, t, 2 * m]), x.get(&[b, h, t, 2 * m + 1])],
                        )
                        .unwrap();
                        let want = matmul(&r, &xb).unwrap();
                        assert!((y.get(&[b, h, t, 2 * m]) - want.data()[0]).abs() <= 1e-12);
                        assert!((y.get(&[b, h, t, 2 * m + 1]) - want.data()[1]).abs() <= 1e-12);
                        let n0 = xb.data()[0].hypot(xb.data()[1]);
                        let n1 = y.get(&[b, h, t, 2 * m]).hypot(y.get(&[b, h, t, 2 * m + 1]));
                        assert!((n0 - n1).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shared_angles_broadcast_over_batch() {
        let mut rng = Rng::new(4);
        let x = rng.normal_array(&[3, 2, 5, 4]);
        let ang = rng.normal_array(&[2, 2]);
        let mut batched = Vec::new();
        for _ in 0..3 {
            batched.extend_from_slice(ang.data());
        }
        let batched = Array::from_vec(&[3, 2, 2], batched).unwrap();
        assert_eq!(reflect_blocks(&x, &ang).unwrap(), reflect_blocks(&x, &batched).unwrap());
    }

    #[test]
    fn odd_dimension_rejected() {
        let x = Array::zeros(&[1, 1, 2, 3]);
        assert!(matches!(reflect_blocks(&x, &Array::zeros(&[1, 1])), Err(Error::OddDimension(3))));
    }

    #[test]
    fn global_examples() {
        let u = GlobalMirror::new(Array::from_vec(&[3], vec![2.0, 0.0, 0.0]).unwrap()).unwrap();
        let x = Array::from_vec(&[1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(global_reflect(&x, &u).unwrap().data(), &[-1.0, 0.0, 0.0]);

        let mut rng = Rng::new(8);
        let uv = rng.normal_vec(4);
        let u = GlobalMirror::new(Array::from_vec(&[4], uv.clone()).unwrap()).unwrap();
        // a vector orthogonal to u
        let mut p = rng.normal_vec(4);
        let c = dot(&p, &uv) / dot(&uv, &uv);
        p.iter_mut().zip(&uv).for_each(|(a, b)| *a -= c * b);
        let x = Array::from_vec(&[1, 1, 4], p.clone()).unwrap();
        let y = global_reflect(&x, &u).unwrap();
        assert!(close(&y, &p, 1e-12));
    }

    #[test]
    fn global_preserves_gram_matrix() {
        let mut rng = Rng::new(31);
        let x = rng.normal_array(&[2, 7, 6]);
        let u = GlobalMirror::new(rng.normal_array(&[6])).unwrap();
        let y = global_reflect(&x, &u).unwrap();
        let xm = x.clone().reshape(&[14, 6]).unwrap();
        let ym = y.reshape(&[14, 6]).unwrap();
        let gx = matmul(&xm, &xm.transpose().unwrap()).unwrap();
        let gy = matmul(&ym, &ym.transpose().unwrap()).unwrap();
        assert!(gx.max_abs_diff(&gy) <= 1e-10);
    }

    #[test]
    fn global_width_mismatch() {
        let u = GlobalMirror::new(Array::filled(&[4], 1.0)).unwrap();
        assert!(global_reflect(&Array::zeros(&[1, 2, 3]), &u).is_err());
    }
}
