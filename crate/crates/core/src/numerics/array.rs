use std::fmt;

use crate::{Error, Result};

/// Dense, contiguous, row-major array of `f64`.
///
/// Every extent is at least one and `shape.iter().product() == data.len()`.
#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Array")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("array must have at least one axis".into()));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Shape(format!("extent of axis {axis} is zero in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Array {
    /// Array of zeros. Panics on an empty shape or a zero extent.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = check_shape(shape).expect("invalid array shape");
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Builds a 2-D array from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_vec(&[rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Row-major offset of a multi-index. Panics if it is out of bounds.
    #[inline]
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &extent) in idx.iter().zip(&self.shape) {
            assert!(i < extent, "index {idx:?} out of bounds for {:?}", self.shape);
            off = off * extent + i;
        }
        off
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|x| x * factor)
    }

    /// Largest absolute elementwise difference. Shapes must agree.
    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row `i` of a 2-D array.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.ndim(), 2, "row() needs a matrix");
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn transpose(&self) -> Result<Array> {
        let [r, c] = self.dims2()?;
        let mut t = Array::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                t.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(t)
    }

    /// `(rows, cols)` of a matrix.
    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(Error::Shape(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }
}

/// Matrix product with a sequential summation over the inner axis.
pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    let [r, k] = a.dims2()?;
    let [k2, c] = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul inner extents differ: {k} vs {k2}")));
    }
    let mut out = vec![0.0; r * c];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let aip = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * c..(p + 1) * c]) {
                *o += aip * bv;
            }
        }
    }
    Array::from_vec(&[r, c], out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn triple_loop(a: &Array, b: &Array) -> Array {
        let [r, k] = a.dims2().unwrap();
        let [_, c] = b.dims2().unwrap();
        let mut out = Array::zeros(&[r, c]);
        for i in 0..r {
            for j in 0..c {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out.set(&[i, j], s);
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let m = Array::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Array::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn permutation_product() {
        let p = Array::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let x = Array::from_rows(&[[1.0], [-1.0]]).unwrap();
        let y = matmul(&p, &x).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = rng.normal_array(&[3, 3]);
        let b = rng.normal_array(&[3, 3]);
        let got = matmul(&a, &b).unwrap();
        assert!(got.max_abs_diff(&triple_loop(&a, &b)) <= 1e-14);
    }

    #[test]
    fn inner_extent_mismatch() {
        let a = Array::zeros(&[2, 3]);
        let b = Array::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Array::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Array::from_vec(&[2, 0], vec![]).is_err());
        assert!(Array::from_vec(&[], vec![]).is_err());
    }

    #[test]
    #[should_panic]
    fn bounds_checked_access() {
        let a = Array::zeros(&[2, 2]);
        let _ = a.get(&[0, 2]);
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = Rng::new(3);
        let a = rng.normal_array(&[3, 5]);
        let t = a.transpose().unwrap();
        assert_eq!(t.shape(), &[5, 3]);
        assert_eq!(t.transpose().unwrap(), a);
        assert_eq!(t.get(&[4, 1]), a.get(&[1, 4]));
    }
}
