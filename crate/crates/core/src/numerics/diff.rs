use super::Array;
use crate::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central finite-difference gradient of a scalar function.
///
/// Coordinate `i` of the result is `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff<F>(f: F, x: &Array, h: f64) -> Result<Array>
where
    F: Fn(&Array) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Array::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Central differences at `h` and `h / 2` combined to cancel the `h^2` error
/// term, leaving an `O(h^4)` truncation error.
pub fn extrapolated_diff<F>(f: F, x: &Array, h: f64) -> Result<Array>
where
    F: Fn(&Array) -> Result<f64>,
{
    let coarse = finite_diff(&f, x, h)?;
    let fine = finite_diff(&f, x, 0.5 * h)?;
    Array::from_vec(
        x.shape(),
        fine.data().iter().zip(coarse.data()).map(|(a, b)| (4.0 * a - b) / 3.0).collect(),
    )
}

/// Central difference along a direction: `(f(x + h d) - f(x - h d)) / 2h`.
pub fn directional_diff<F>(f: F, x: &Array, direction: &Array, h: f64) -> Result<f64>
where
    F: Fn(&Array) -> Result<f64>,
{
    if x.shape() != direction.shape() {
        return Err(Error::Shape("direction must match the point".into()));
    }
    let shifted = |sign: f64| {
        let data = x.data().iter().zip(direction.data()).map(|(a, d)| a + sign * h * d).collect();
        Array::from_vec(x.shape(), data)
    };
    let plus = f(&shifted(1.0)?)?;
    let minus = f(&shifted(-1.0)?)?;
    if !(plus.is_finite() && minus.is_finite()) {
        return Err(Error::NonFinite("objective along direction".into()));
    }
    Ok((plus - minus) / (2.0 * h))
}
