//! The reflecting feature map.
//!
//! For an input `x: [B, N, H*D]` the map runs, in order:
//!
//! 1. global reflection of every token row by `u_c`,
//! 2. split into heads, giving `[B, H, N, D]`,
//! 3. per-block variance over tokens and the two block coordinates,
//! 4. angle modulation `Theta = theta + sigmoid(lambda / (var + eps)) * alpha_max`,
//! 5. block-wise 2D reflection by `Theta`,
//! 6. ReLU.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::PI;

use crate::numerics::Array;
use crate::reflect::{self, dims3, dims4, GlobalMirror, MirrorAngles};
use crate::{Error, Result, Rng};

/// Hyperparameters of the variance-aware angle modulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulationConfig {
    /// Sensitivity `lambda > 0`.
    pub lambda: f64,
    /// Stabiliser `eps > 0` added to the variance.
    pub eps: f64,
    /// Maximum angular shift, in `(0, pi]`.
    pub alpha_max: f64,
    /// Treat the block variance as a constant in the backward pass.
    pub stop_grad_variance: bool,
    /// Skip the cross-head reflection (ablation).
    pub disable_global: bool,
    /// Use the base angles unmodified (ablation).
    pub disable_modulation: bool,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eps: 1e-6,
            alpha_max: FRAC_PI_2,
            stop_grad_variance: true,
            disable_global: false,
            disable_modulation: false,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max <= PI) {
            return Err(Error::InvalidArgument(format!(
                "alpha_max must lie in (0, pi], got {}",
                self.alpha_max
            )));
        }
        Ok(())
    }

    /// Angular shift for a block with variance `sigma2`.
    pub fn shift(&self, sigma2: f64) -> f64 {
        angle_shift(sigma2, self.lambda, self.eps, self.alpha_max)
    }
}

/// Base angles and cross-head mirror for one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MirrorParams {
    pub angles: MirrorAngles,
    pub mirror: GlobalMirror,
}

impl MirrorParams {
    pub fn new(angles: MirrorAngles, mirror: GlobalMirror) -> Result<Self> {
        let width = angles.heads() * angles.blocks() * 2;
        if mirror.dim() != width {
            return Err(Error::Shape(format!(
                "global mirror has dimension {} but {} heads x {} blocks need {width}",
                mirror.dim(),
                angles.heads(),
                angles.blocks()
            )));
        }
        Ok(Self { angles, mirror })
    }

    /// Standard-normal base angles and mirror direction.
    pub fn random(rng: &mut Rng, heads: usize, head_dim: usize) -> Result<Self> {
        if !head_dim.is_multiple_of(2) {
            return Err(Error::OddDimension(head_dim));
        }
        let angles = MirrorAngles::new(rng.normal_array(&[heads, head_dim / 2]))?;
        let mirror = GlobalMirror::new(rng.normal_array(&[heads * head_dim]))?;
        Self::new(angles, mirror)
    }

    pub fn heads(&self) -> usize {
        self.angles.heads()
    }

    pub fn head_dim(&self) -> usize {
        2 * self.angles.blocks()
    }
}

/// Per-block token statistics of a `[B, H, N, D]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockStats {
    /// `[B, H, D/2]`, non-negative.
    pub variance: Array,
    /// `[B, H, D/2, 2]`.
    pub mean: Array,
}

/// `var[b,h,m] = 1/(2N) * sum_t |x[b,h,t,m] - mean[b,h,m]|^2`.
pub fn block_variance(x: &Array) -> Result<BlockStats> {
    let [b, h, n, d] = dims4(x)?;
    if d % 2 != 0 {
        return Err(Error::OddDimension(d));
    }
    let m = d / 2;
    let mut mean = Array::zeros(&[b, h, m, 2]);
    let mut var = Array::zeros(&[b, h, m]);
    let xd = x.data();
    for bh in 0..b * h {
        let slab = &xd[bh * n * d..(bh + 1) * n * d];
        let mu = &mut mean.data_mut()[bh * d..(bh + 1) * d];
        for row in slab.chunks_exact(d) {
            mu.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        mu.iter_mut().for_each(|a| *a /= n as f64);
        let mu = mu.to_vec();
        let vs = &mut var.data_mut()[bh * m..(bh + 1) * m];
        for row in slab.chunks_exact(d) {
            for (blk, v) in vs.iter_mut().enumerate() {
                let d0 = row[2 * blk] - mu[2 * blk];
                let d1 = row[2 * blk + 1] - mu[2 * blk + 1];
                *v += d0 * d0 + d1 * d1;
            }
        }
        vs.iter_mut().for_each(|v| *v /= 2.0 * n as f64);
    }
    Ok(BlockStats { variance: var, mean })
}

/// Logistic function evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(lambda / (sigma2 + eps)) * alpha_max`.
pub fn angle_shift(sigma2: f64, lambda: f64, eps: f64, alpha_max: f64) -> f64 {
    sigmoid(lambda / (sigma2 + eps)) * alpha_max
}

/// Effective angles `[B, H, M]` from base angles and block variances `[B, H, M]`.
pub fn modulate_angles(
    theta: &MirrorAngles,
    variance: &Array,
    cfg: &ModulationConfig,
) -> Result<Array> {
    let (h, m) = (theta.heads(), theta.blocks());
    let b = match variance.shape() {
        &[b, vh, vm] if vh == h && vm == m => b,
        s => {
            return Err(Error::Shape(format!(
                "variance {s:?} does not match angles [{h}, {m}]"
            )))
        }
    };
    let base = theta.as_array().data();
    let mut out = Array::zeros(&[b, h, m]);
    for (i, (o, &v)) in out.data_mut().iter_mut().zip(variance.data()).enumerate() {
        let t = base[i % (h * m)];
        *o = if cfg.disable_modulation { t } else { t + cfg.shift(v) };
    }
    Ok(out)
}

/// `[B, N, H*D] -> [B, H, N, D]`.
pub fn split_heads(x: &Array, heads: usize) -> Result<Array> {
    let [b, n, f] = dims3(x)?;
    if heads == 0 || f % heads != 0 {
        return Err(Error::Shape(format!("width {f} is not divisible into {heads} heads")));
    }
    let d = f / heads;
    let mut out = Array::zeros(&[b, heads, n, d]);
    let (src, dst) = (x.data(), out.data_mut());
    for bi in 0..b {
        for t in 0..n {
            for h in 0..heads {
                let s = (bi * n + t) * f + h * d;
                let o = ((bi * heads + h) * n + t) * d;
                dst[o..o + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    Ok(out)
}

/// `[B, H, N, D] -> [B, N, H*D]`.
pub fn merge_heads(x: &Array) -> Result<Array> {
    let [b, heads, n, d] = dims4(x)?;
    let f = heads * d;
    let mut out = Array::zeros(&[b, n, f]);
    let (src, dst) = (x.data(), out.data_mut());
    for bi in 0..b {
        for t in 0..n {
            for h in 0..heads {
                let s = ((bi * heads + h) * n + t) * d;
                let o = (bi * n + t) * f + h * d;
                dst[o..o + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    Ok(out)
}

/// Where the block variances driving the modulation come from.
#[derive(Clone, Copy, Debug)]
pub enum VarianceSource<'a> {
    /// Computed from the tensor being mapped.
    Computed,
    /// Supplied `[B, H, D/2]` values held fixed (used as a gradient oracle
    /// for the stop-gradient convention).
    Frozen(&'a Array),
}

/// Every intermediate of one feature-map evaluation.
#[derive(Clone, Debug)]
pub struct FeatureMapTrace {
    /// Input rows `[B, N, H*D]`.
    pub input: Array,
    /// After the global reflection, split into heads `[B, H, N, D]`.
    pub heads: Array,
    pub stats: BlockStats,
    /// Effective angles `[B, H, D/2]`.
    pub angles: Array,
    /// Block-reflected tensor before ReLU `[B, H, N, D]`.
    pub pre_activation: Array,
    /// `ReLU(pre_activation)`.
    pub output: Array,
}

impl FeatureMapTrace {
    pub fn mask(&self) -> ActivationMask {
        ActivationMask::from_pre_activation(&self.pre_activation)
    }
}

pub fn feature_map_traced(
    x: &Array,
    params: &MirrorParams,
    cfg: &ModulationConfig,
    variance: VarianceSource<'_>,
) -> Result<FeatureMapTrace> {
    cfg.validate()?;
    let [_, _, f] = dims3(x)?;
    let (heads, d) = (params.heads(), params.head_dim());
    if f != heads * d {
        return Err(Error::Shape(format!(
            "input width {f} does not match {heads} heads x {d} dims"
        )));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("feature-map input".into()));
    }
    let rows = if cfg.disable_global {
        x.clone()
    } else {
        reflect::global_reflect(x, &params.mirror)?
    };
    let heads_t = split_heads(&rows, heads)?;
    let mut stats = block_variance(&heads_t)?;
    if let VarianceSource::Frozen(v) = variance {
        if v.shape() != stats.variance.shape() {
            return Err(Error::Shape(format!(
                "frozen variance {:?} does not match {:?}",
                v.shape(),
                stats.variance.shape()
            )));
        }
        stats.variance = v.clone();
    }
    let angles = modulate_angles(&params.angles, &stats.variance, cfg)?;
    let pre = reflect::reflect_blocks(&heads_t, &angles)?;
    let output = pre.map(|v| v.max(0.0));
    Ok(FeatureMapTrace {
        input: x.clone(),
        heads: heads_t,
        stats,
        angles,
        pre_activation: pre,
        output,
    })
}

/// `[B, N, H*D] -> [B, H, N, D]`, elementwise non-negative.
pub fn mirror_feature_map(x: &Array, params: &MirrorParams, cfg: &ModulationConfig) -> Result<Array> {
    Ok(feature_map_traced(x, params, cfg, VarianceSource::Computed)?.output)
}

/// Forward-only feature map over several token sets that share block
/// statistics, as if they were concatenated along the token axis.
///
/// Each part is `(x, scale)` with `x: [B, N_i, H*D]`; rows are multiplied by
/// `scale` first. Returns one `[B, H, N_i, D]` tensor per part, bitwise equal
/// to the slices of [`feature_map_traced`] on the scaled concatenation, but
/// with a single pass over the input and one allocation per part.
pub fn mirror_features_joint(
    parts: &[(&Array, f64)],
    params: &MirrorParams,
    cfg: &ModulationConfig,
) -> Result<Vec<Array>> {
    cfg.validate()?;
    let (heads, d) = (params.heads(), params.head_dim());
    let f = heads * d;
    let m = d / 2;
    let mut b = None;
    for (x, _) in parts {
        let [xb, _, xf] = dims3(x)?;
        if xf != f || b.is_some_and(|b| b != xb) {
            return Err(Error::Shape(format!(
                "token set {:?} does not match {heads} heads x {d} dims",
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("feature-map input".into()));
        }
        b = Some(xb);
    }
    let Some(b) = b else {
        return Err(Error::InvalidArgument("no token sets given".into()));
    };
    let total: usize = parts.iter().map(|(x, _)| x.shape()[1]).sum();

    let unit = (!cfg.disable_global).then(|| params.mirror.unit());
    let mut outs: Vec<Array> =
        parts.iter().map(|(x, _)| Array::zeros(&[b, heads, x.shape()[1], d])).collect();
    let mut row = vec![0.0; f];
    for ((x, scale), out) in parts.iter().zip(outs.iter_mut()) {
        let n = x.shape()[1];
        let dst = out.data_mut();
        for (i, src) in x.data().chunks_exact(f).enumerate() {
            let (bi, t) = (i / n, i % n);
            row.iter_mut().zip(src).for_each(|(r, v)| *r = v * scale);
            if let Some(unit) = &unit {
                let p = 2.0 * crate::numerics::dot(&row, unit);
                row.iter_mut().zip(unit).for_each(|(r, w)| *r -= p * w);
            }
            for h in 0..heads {
                let o = ((bi * heads + h) * n + t) * d;
                dst[o..o + d].copy_from_slice(&row[h * d..(h + 1) * d]);
            }
        }
    }

    let base = params.angles.as_array().data();
    let mut mu = vec![0.0; d];
    let mut var = vec![0.0; m];
    let mut trig = vec![(0.0, 0.0); m];
    for bh in 0..b * heads {
        let slabs = |o: &Array| {
            let n = o.shape()[2];
            (bh * n * d, (bh + 1) * n * d)
        };
        mu.iter_mut().for_each(|v| *v = 0.0);
        var.iter_mut().for_each(|v| *v = 0.0);
        for o in &outs {
            let (s, e) = slabs(o);
            for r in o.data()[s..e].chunks_exact(d) {
                mu.iter_mut().zip(r).for_each(|(a, v)| *a += v);
            }
        }
        mu.iter_mut().for_each(|a| *a /= total as f64);
        for o in &outs {
            let (s, e) = slabs(o);
            for r in o.data()[s..e].chunks_exact(d) {
                for (blk, v) in var.iter_mut().enumerate() {
                    let d0 = r[2 * blk] - mu[2 * blk];
                    let d1 = r[2 * blk + 1] - mu[2 * blk + 1];
                    *v += d0 * d0 + d1 * d1;
                }
            }
        }
        let h = bh % heads;
        for (blk, tr) in trig.iter_mut().enumerate() {
            let v = var[blk] / (2.0 * total as f64);
            let t = base[h * m + blk];
            let angle = if cfg.disable_modulation { t } else { t + cfg.shift(v) };
            *tr = (2.0 * angle).sin_cos();
        }
        for o in outs.iter_mut() {
            let (s, e) = slabs(o);
            for r in o.data_mut()[s..e].chunks_exact_mut(d) {
                for (blk, &(sn, c)) in r.chunks_exact_mut(2).zip(&trig) {
                    let (x1, x2) = (blk[0], blk[1]);
                    blk[0] = (x1 * c + x2 * sn).max(0.0);
                    blk[1] = (x1 * sn - x2 * c).max(0.0);
                }
            }
        }
    }
    Ok(outs)
}

/// Post-reflection sign pattern: 1 where the pre-ReLU value is strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMask {
    mask: Array,
}

impl ActivationMask {
    pub fn from_pre_activation(pre: &Array) -> Self {
        Self { mask: pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 }) }
    }

    pub fn as_array(&self) -> &Array {
        &self.mask
    }

    pub fn shape(&self) -> &[usize] {
        self.mask.shape()
    }

    /// Mask row of token `t` in slice `(b, h)`.
    pub fn token(&self, b: usize, h: usize, t: usize) -> Vec<bool> {
        let s = self.mask.shape();
        let d = s[3];
        let off = ((b * s[1] + h) * s[2] + t) * d;
        self.mask.data()[off..off + d].iter().map(|&v| v > 0.5).collect()
    }
}

pub fn activation_mask(
    x: &Array,
    params: &MirrorParams,
    cfg: &ModulationConfig,
) -> Result<ActivationMask> {
    Ok(feature_map_traced(x, params, cfg, VarianceSource::Computed)?.mask())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, matmul};
    use crate::reflect::{householder_2d, householder_matrix};
    use std::f64::consts::FRAC_PI_4;

    fn params(theta: Array, u: Array) -> MirrorParams {
        MirrorParams::new(MirrorAngles::new(theta).unwrap(), GlobalMirror::new(u).unwrap()).unwrap()
    }

    /// Straight-line per-token evaluation using explicit matrices.
    fn scalar_pipeline(x: &Array, p: &MirrorParams, cfg: &ModulationConfig) -> Array {
        let [b, n, f] = dims3(x).unwrap();
        let (hh, d) = (p.heads(), p.head_dim());
        let m = d / 2;
        let hc = householder_matrix(p.mirror.as_array().data()).unwrap();
        let mut out = Array::zeros(&[b, hh, n, d]);
        for bi in 0..b {
            let mut rows = Vec::new();
            for t in 0..n {
                let mut xr = Array::zeros(&[1, f]);
                for j in 0..f {
                    xr.set(&[0, j], x.get(&[bi, t, j]));
                }
                rows.push(if cfg.disable_global { xr } else { matmul(&xr, &hc).unwrap() });
            }
            for h in 0..hh {
                for blk in 0..m {
                    let c0 = h * d + 2 * blk;
                    // two-pass variance
                    let (mut s0, mut s1) = (0.0, 0.0);
                    for r in &rows {
                        s0 += r.get(&[0, c0]);
                        s1 += r.get(&[0, c0 + 1]);
                    }
                    let (m0, m1) = (s0 / n as f64, s1 / n as f64);
                    let mut ss = 0.0;
                    for r in &rows {
                        ss += (r.get(&[0, c0]) - m0).powi(2) + (r.get(&[0, c0 + 1]) - m1).powi(2);
                    }
                    let var = ss / (2.0 * n as f64);
                    let mut theta = p.angles.as_array().get(&[h, blk]);
                    if !cfg.disable_modulation {
                        theta += 1.0 / (1.0 + (-cfg.lambda / (var + cfg.eps)).exp()) * cfg.alpha_max;
                    }
                    let r2 = householder_2d(theta);
                    for (t, r) in rows.iter().enumerate() {
                        let v = Array::from_vec(&[2, 1], vec![r.get(&[0, c0]), r.get(&[0, c0 + 1])])
                            .unwrap();
                        let z = matmul(&r2, &v).unwrap();
                        out.set(&[bi, h, t, 2 * blk], z.data()[0].max(0.0));
                        out.set(&[bi, h, t, 2 * blk + 1], z.data()[1].max(0.0));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn variance_of_identical_tokens_is_zero() {
        let row = [0.3, -1.0, 2.0, 0.5];
        let x = Array::from_vec(&[1, 1, 3, 4], row.repeat(3)).unwrap();
        let s = block_variance(&x).unwrap();
        assert!(s.variance.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variance_hand_example() {
        let x = Array::from_vec(&[1, 1, 2, 2], vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let s = block_variance(&x).unwrap();
        assert_eq!(s.mean.data(), &[1.0, 0.0]);
        assert_eq!(s.variance.data(), &[0.5]);
    }

    #[test]
    fn single_token_has_zero_variance() {
        let x = Array::from_vec(&[1, 1, 1, 2], vec![4.0, -2.0]).unwrap();
        assert_eq!(block_variance(&x).unwrap().variance.data(), &[0.0]);
    }

    #[test]
    fn variance_matches_two_pass_oracle() {
        let mut rng = Rng::new(12);
        let x = rng.normal_array(&[2, 3, 7, 6]);
        let s = block_variance(&x).unwrap();
        for b in 0..2 {
            for h in 0..3 {
                for m in 0..3 {
                    let col = |c: usize| (0..7).map(|t| x.get(&[b, h, t, 2 * m + c])).collect::<Vec<_>>();
                    let (a, bb) = (col(0), col(1));
                    let ma = a.iter().sum::<f64>() / 7.0;
                    let mb = bb.iter().sum::<f64>() / 7.0;
                    let ss: f64 = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>()
                        + bb.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
                    assert!((s.variance.get(&[b, h, m]) - ss / 14.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn shift_endpoints() {
        let cfg = ModulationConfig::default();
        assert!(cfg.shift(0.0) >= 0.999999 * cfg.alpha_max);
        let big = cfg.shift(1e12);
        assert!((big / cfg.alpha_max - 0.5).abs() < 1e-6);
        // sigmoid(1) * pi/2
        let v = angle_shift(1.0, 1.0, 0.0, FRAC_PI_2);
        assert!((v - 0.731_058_578_630_004_9 * FRAC_PI_2).abs() < 1e-12);
        assert!((v - 1.148_344_129_983_909_7).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_overflow_safe() {
        assert_eq!(sigmoid(1e6), 1.0);
        assert_eq!(sigmoid(-1e6), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() == 0.0);
        assert!((sigmoid(-3.0) + sigmoid(3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ModulationConfig::default().validate().is_ok());
        let bad = [
            ModulationConfig { lambda: 0.0, ..Default::default() },
            ModulationConfig { eps: 0.0, ..Default::default() },
            ModulationConfig { alpha_max: 0.0, ..Default::default() },
            ModulationConfig { alpha_max: 3.2, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let mut rng = Rng::new(2);
        let p = MirrorParams::random(&mut rng, 2, 4).unwrap();
        let cfg = ModulationConfig::default();
        let t = feature_map_traced(&Array::zeros(&[1, 3, 8]), &p, &cfg, VarianceSource::Computed)
            .unwrap();
        assert!(t.output.data().iter().all(|&v| v == 0.0));
        assert!(t.stats.variance.data().iter().all(|&v| v == 0.0));
        for (i, a) in t.angles.data().iter().enumerate() {
            let want = p.angles.as_array().data()[i % 4] + cfg.shift(0.0);
            assert_eq!(*a, want);
        }
    }

    #[test]
    fn swap_block_then_relu() {
        // Theta = pi/4 on every block, global reflection off, modulation off
        let p = params(Array::filled(&[1, 1], FRAC_PI_4), Array::filled(&[2], 1.0));
        let cfg = ModulationConfig { disable_global: true, disable_modulation: true, ..Default::default() };
        let x = Array::from_vec(&[1, 1, 2], vec![1.0, -1.0]).unwrap();
        let out = mirror_feature_map(&x, &p, &cfg).unwrap();
        assert!(out.data()[0] == 0.0 && (out.data()[1] - 1.0).abs() < 1e-15);
        let mask = activation_mask(&x, &p, &cfg).unwrap();
        assert_eq!(mask.as_array().data(), &[0.0, 1.0]);
    }

    #[test]
    fn negative_pre_activation_gives_empty_mask() {
        // theta = 0 maps (a, b) to (a, -b)
        let p = params(Array::zeros(&[1, 1]), Array::filled(&[2], 1.0));
        let cfg = ModulationConfig { disable_global: true, disable_modulation: true, ..Default::default() };
        let x = Array::from_vec(&[1, 2, 2], vec![-1.0, 2.0, -0.5, 0.1]).unwrap();
        let m = activation_mask(&x, &p, &cfg).unwrap();
        assert!(m.as_array().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_pipeline() {
        let mut rng = Rng::new(77);
        for trial in 0..20 {
            let (b, h, d, n) = (1 + trial % 2, 1 + trial % 3, 2 + 2 * (trial % 3), 1 + trial % 6);
            let p = MirrorParams::random(&mut rng, h, d).unwrap();
            let x = rng.normal_array(&[b, n, h * d]).scale(rng.uniform_range(0.05, 2.0));
            let cfg = ModulationConfig {
                disable_global: trial % 5 == 0,
                disable_modulation: trial % 7 == 0,
                lambda: rng.uniform_range(0.2, 3.0),
                ..Default::default()
            };
            let got = mirror_feature_map(&x, &p, &cfg).unwrap();
            let want = scalar_pipeline(&x, &p, &cfg);
            assert!(got.max_abs_diff(&want) <= 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn mask_is_output_positivity() {
        let mut rng = Rng::new(6);
        let p = MirrorParams::random(&mut rng, 3, 4).unwrap();
        let x = rng.normal_array(&[2, 9, 12]);
        let cfg = ModulationConfig::default();
        let t = feature_map_traced(&x, &p, &cfg, VarianceSource::Computed).unwrap();
        for (m, o) in t.mask().as_array().data().iter().zip(t.output.data()) {
            assert_eq!(*m == 1.0, *o > 0.0);
        }
    }

    #[test]
    fn pre_activation_preserves_token_inner_products() {
        let mut rng = Rng::new(19);
        let p = MirrorParams::random(&mut rng, 2, 6).unwrap();
        let x = rng.normal_array(&[1, 8, 12]);
        let t = feature_map_traced(&x, &p, &ModulationConfig::default(), VarianceSource::Computed)
            .unwrap();
        let z = merge_heads(&t.pre_activation).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let a = dot(&x.data()[i * 12..(i + 1) * 12], &x.data()[j * 12..(j + 1) * 12]);
                let b = dot(&z.data()[i * 12..(i + 1) * 12], &z.data()[j * 12..(j + 1) * 12]);
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn batch_permutation_commutes() {
        let mut rng = Rng::new(40);
        let p = MirrorParams::random(&mut rng, 2, 4).unwrap();
        let x = rng.normal_array(&[3, 5, 8]);
        let perm = [2usize, 0, 1];
        let mut px = Array::zeros(&[3, 5, 8]);
        for (dst, &src) in perm.iter().enumerate() {
            px.data_mut()[dst * 40..(dst + 1) * 40].copy_from_slice(&x.data()[src * 40..(src + 1) * 40]);
        }
        let cfg = ModulationConfig::default();
        let y = mirror_feature_map(&x, &p, &cfg).unwrap();
        let py = mirror_feature_map(&px, &p, &cfg).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(&py.data()[dst * 40..(dst + 1) * 40], &y.data()[src * 40..(src + 1) * 40]);
        }
    }

    #[test]
    fn split_merge_roundtrip() {
        let mut rng = Rng::new(1);
        let x = rng.normal_array(&[2, 3, 12]);
        let s = split_heads(&x, 3).unwrap();
        assert_eq!(s.shape(), &[2, 3, 3, 4]);
        assert_eq!(s.get(&[1, 2, 0, 1]), x.get(&[1, 0, 9]));
        assert_eq!(merge_heads(&s).unwrap(), x);
    }

    #[test]
    fn shape_violations() {
        let mut rng = Rng::new(1);
        let p = MirrorParams::random(&mut rng, 2, 4).unwrap();
        let cfg = ModulationConfig::default();
        assert!(mirror_feature_map(&Array::zeros(&[1, 3, 6]), &p, &cfg).is_err());
        assert!(mirror_feature_map(&Array::zeros(&[3, 8]), &p, &cfg).is_err());
        assert!(MirrorParams::random(&mut rng, 2, 3).is_err());
    }
}
