//! Reverse-mode gradients of the feature map and both attention forms,
//! written out by hand, plus a finite-difference validation harness.
//!
//! Conventions: `ReLU'(0) = 0`. With `stop_grad_variance` the block variance
//! is a constant of the backward pass, so the matching finite-difference
//! oracle holds the variance fixed at the unperturbed point
//! ([`FrozenVariance`]).

use std::fmt;

use crate::attention::{
    linear_direct_from_features, linear_reordered_from_features, map_features, AttentionConfig,
    AttentionOutput, BufferMeter, FeaturePair, FrozenVariance, PairTrace,
};
use crate::featmap::{merge_heads, sigmoid, FeatureMapTrace, MirrorParams, ModulationConfig};
use crate::numerics::{dot, extrapolated_diff, Array, DEFAULT_STEP};
use crate::reflect::{dims3, dims4, GlobalMirror, MirrorAngles};
use crate::{Error, Result, Rng};

/// Scalar reduction of the attention output used as the loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum LossSpec {
    /// `sum(o^2)`.
    #[default]
    SumSquares,
    /// `sum(o)`.
    Sum,
    /// `sum(w * o)` for a weight tensor shaped like the output.
    Weighted(Array),
}

impl LossSpec {
    pub fn value(&self, out: &Array) -> Result<f64> {
        match self {
            LossSpec::SumSquares => Ok(out.data().iter().map(|x| x * x).sum()),
            LossSpec::Sum => Ok(out.sum()),
            LossSpec::Weighted(w) => {
                if w.shape() != out.shape() {
                    return Err(Error::Shape("loss weights do not match the output".into()));
                }
                Ok(dot(w.data(), out.data()))
            }
        }
    }

    pub fn gradient(&self, out: &Array) -> Result<Array> {
        match self {
            LossSpec::SumSquares => Ok(out.scale(2.0)),
            LossSpec::Sum => Ok(Array::filled(out.shape(), 1.0)),
            LossSpec::Weighted(w) => {
                if w.shape() != out.shape() {
                    return Err(Error::Shape("loss weights do not match the output".into()));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Gradients of the loss with respect to every input and parameter.
#[derive(Clone, Debug)]
pub struct GradBundle {
    /// `[H, D/2]`.
    pub d_theta: Array,
    /// `[H*D]`.
    pub d_uc: Array,
    /// `[B, Nq, H*D]`.
    pub d_q: Array,
    /// `[B, Nk, H*D]`.
    pub d_k: Array,
    /// `[B, H, Nk, Dv]`.
    pub d_v: Array,
    pub loss: f64,
}

/// Gradients through one feature-map evaluation.
#[derive(Clone, Debug)]
pub struct FeatureMapGrads {
    pub d_theta: Array,
    pub d_uc: Array,
    /// With respect to the map's input rows, `[B, N, H*D]`.
    pub d_x: Array,
}

/// Gradients through linear attention on precomputed features.
#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub d_phi_q: Array,
    pub d_phi_k: Array,
    pub d_v: Array,
}

/// Backward of the block reflection `z = R(Theta) y`.
///
/// Returns `(d_y, d_Theta)` with `d_y = R(Theta)^T d_z = R(Theta) d_z` and
/// `d_Theta = sum_t d_z . dR/dTheta y`, where
/// `dR/dTheta = 2 [[-sin 2T, cos 2T], [cos 2T, sin 2T]]`.
pub fn reflect_blocks_backward(g_pre: &Array, heads: &Array, angles: &Array) -> Result<(Array, Array)> {
    let [b, h, n, d] = dims4(heads)?;
    if g_pre.shape() != heads.shape() || angles.shape() != [b, h, d / 2] {
        return Err(Error::Shape("block reflection backward operands disagree".into()));
    }
    let m = d / 2;
    let mut g_y = Array::zeros(heads.shape());
    let mut g_angle = Array::zeros(&[b, h, m]);
    for bh in 0..b * h {
        for blk in 0..m {
            let (s, c) = (2.0 * angles.data()[bh * m + blk]).sin_cos();
            let mut acc = 0.0;
            for t in 0..n {
                let off = (bh * n + t) * d + 2 * blk;
                let (y1, y2) = (heads.data()[off], heads.data()[off + 1]);
                let (g1, g2) = (g_pre.data()[off], g_pre.data()[off + 1]);
                g_y.data_mut()[off] = c * g1 + s * g2;
                g_y.data_mut()[off + 1] = s * g1 - c * g2;
                acc += 2.0 * (g1 * (-s * y1 + c * y2) + g2 * (c * y1 + s * y2));
            }
            g_angle.data_mut()[bh * m + blk] = acc;
        }
    }
    Ok((g_y, g_angle))
}

/// Backward of one feature-map evaluation given `d loss / d output`.
///
/// `variance_is_constant` must be set when the trace was produced from a
/// frozen variance; it has the same effect as `stop_grad_variance`.
pub fn feature_map_backward(
    trace: &FeatureMapTrace,
    g_out: &Array,
    params: &MirrorParams,
    cfg: &ModulationConfig,
    variance_is_constant: bool,
) -> Result<FeatureMapGrads> {
    let [b, h, n, d] = dims4(&trace.heads)?;
    if g_out.shape() != trace.output.shape() {
        return Err(Error::Shape("output gradient does not match the feature map".into()));
    }
    let m = d / 2;

    let mut g_pre = g_out.clone();
    for (g, &z) in g_pre.data_mut().iter_mut().zip(trace.pre_activation.data()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let (mut g_y, g_angle) = reflect_blocks_backward(&g_pre, &trace.heads, &trace.angles)?;

    let mut d_theta = Array::zeros(&[h, m]);
    for (i, g) in g_angle.data().iter().enumerate() {
        d_theta.data_mut()[i % (h * m)] += g;
    }

    if !cfg.disable_modulation && !cfg.stop_grad_variance && !variance_is_constant {
        for bh in 0..b * h {
            for blk in 0..m {
                let var = trace.stats.variance.data()[bh * m + blk];
                let den = var + cfg.eps;
                let w = cfg.lambda / den;
                let sg = sigmoid(w);
                // dTheta/dvar = alpha * sig'(w) * (-lambda / den^2)
                let dvar = g_angle.data()[bh * m + blk] * cfg.alpha_max * sg * (1.0 - sg)
                    * (-cfg.lambda / (den * den));
                if dvar == 0.0 {
                    continue;
                }
                let mu0 = trace.stats.mean.data()[(bh * m + blk) * 2];
                let mu1 = trace.stats.mean.data()[(bh * m + blk) * 2 + 1];
                for t in 0..n {
                    let off = (bh * n + t) * d + 2 * blk;
                    let (y1, y2) = (trace.heads.data()[off], trace.heads.data()[off + 1]);
                    g_y.data_mut()[off] += dvar * (y1 - mu0) / n as f64;
                    g_y.data_mut()[off + 1] += dvar * (y2 - mu1) / n as f64;
                }
            }
        }
    }

    let g_rows = merge_heads(&g_y)?;
    let width = h * d;
    if cfg.disable_global {
        return Ok(FeatureMapGrads { d_theta, d_uc: Array::zeros(&[width]), d_x: g_rows });
    }
    let unit = params.mirror.unit();
    let norm = params.mirror.norm();
    let mut d_x = g_rows.clone();
    let mut g_unit = vec![0.0; width];
    for (gx, x) in d_x.data_mut().chunks_exact_mut(width).zip(trace.input.data().chunks_exact(width)) {
        let ug = dot(&unit, gx);
        let ux = dot(&unit, x);
        for j in 0..width {
            g_unit[j] -= 2.0 * (ux * gx[j] + ug * x[j]);
        }
        gx.iter_mut().zip(&unit).for_each(|(g, u)| *g -= 2.0 * ug * u);
    }
    // through the normalisation u_hat = u / |u|
    let proj = dot(&unit, &g_unit);
    let d_uc: Vec<f64> = g_unit.iter().zip(&unit).map(|(g, u)| (g - u * proj) / norm).collect();
    Ok(FeatureMapGrads { d_theta, d_uc: Array::from_vec(&[width], d_uc)?, d_x })
}

/// Backward of normalised linear attention on features, via the
/// reordered (`O(N D Dv)`) factorisation.
pub fn attention_backward(
    phi_q: &Array,
    phi_k: &Array,
    v: &Array,
    fwd: &AttentionOutput,
    g_out: &Array,
) -> Result<AttentionGrads> {
    let [b, h, nq, d] = dims4(phi_q)?;
    let nk = phi_k.shape()[2];
    let dv = v.shape()[3];
    if g_out.shape() != fwd.out.shape() {
        return Err(Error::Shape("output gradient does not match attention output".into()));
    }
    let mut d_phi_q = Array::zeros(phi_q.shape());
    let mut d_phi_k = Array::zeros(phi_k.shape());
    let mut d_v = Array::zeros(v.shape());
    let mut s = vec![0.0; d * dv];
    let mut z = vec![0.0; d];
    let mut p = vec![0.0; d * dv];
    let mut r = vec![0.0; d];
    let mut g_num = vec![0.0; dv];
    for bh in 0..b * h {
        s.iter_mut().for_each(|x| *x = 0.0);
        z.iter_mut().for_each(|x| *x = 0.0);
        p.iter_mut().for_each(|x| *x = 0.0);
        r.iter_mut().for_each(|x| *x = 0.0);
        let ks = &phi_k.data()[bh * nk * d..][..nk * d];
        let vs = &v.data()[bh * nk * dv..][..nk * dv];
        for (kr, vr) in ks.chunks_exact(d).zip(vs.chunks_exact(dv)) {
            for j in 0..d {
                z[j] += kr[j];
                for c in 0..dv {
                    s[j * dv + c] += kr[j] * vr[c];
                }
            }
        }
        for t in 0..nq {
            let den = fwd.denom.data()[bh * nq + t];
            let go = &g_out.data()[(bh * nq + t) * dv..][..dv];
            let o = &fwd.out.data()[(bh * nq + t) * dv..][..dv];
            g_num.iter_mut().zip(go).for_each(|(a, g)| *a = g / den);
            let g_den = -dot(go, o) / den;
            let qr = &phi_q.data()[(bh * nq + t) * d..][..d];
            let gq = &mut d_phi_q.data_mut()[(bh * nq + t) * d..][..d];
            for j in 0..d {
                gq[j] = dot(&s[j * dv..(j + 1) * dv], &g_num) + g_den * z[j];
                for c in 0..dv {
                    p[j * dv + c] += qr[j] * g_num[c];
                }
                r[j] += g_den * qr[j];
            }
        }
        for i in 0..nk {
            let kr = &ks[i * d..(i + 1) * d];
            let vr = &vs[i * dv..(i + 1) * dv];
            let gk = &mut d_phi_k.data_mut()[(bh * nk + i) * d..][..d];
            for j in 0..d {
                gk[j] = dot(&p[j * dv..(j + 1) * dv], vr) + r[j];
            }
            let gv = &mut d_v.data_mut()[(bh * nk + i) * dv..][..dv];
            for c in 0..dv {
                gv[c] = (0..d).map(|j| p[j * dv + c] * kr[j]).sum();
            }
        }
    }
    Ok(AttentionGrads { d_phi_q, d_phi_k, d_v })
}

/// Concatenates `[B, H, N1, D]` and `[B, H, N2, D]` along tokens.
fn concat_heads_tokens(a: &Array, b: &Array) -> Result<Array> {
    let [bb, h, na, d] = dims4(a)?;
    let nb = b.shape()[2];
    let mut data = Vec::with_capacity(a.len() + b.len());
    for bh in 0..bb * h {
        data.extend_from_slice(&a.data()[bh * na * d..(bh + 1) * na * d]);
        data.extend_from_slice(&b.data()[bh * nb * d..(bh + 1) * nb * d]);
    }
    Array::from_vec(&[bb, h, na + nb, d], data)
}

/// Rows `start..end` of a `[B, N, F]` tensor.
fn slice_rows(x: &Array, start: usize, end: usize) -> Result<Array> {
    let [b, n, f] = dims3(x)?;
    let mut data = Vec::with_capacity(b * (end - start) * f);
    for bi in 0..b {
        data.extend_from_slice(&x.data()[(bi * n + start) * f..(bi * n + end) * f]);
    }
    Array::from_vec(&[b, end - start, f], data)
}

/// Chains feature gradients back through the feature map(s).
///
/// Returns `(d_theta, d_uc, d_q, d_k)`; `d_q` includes the query scale.
pub fn feature_pair_backward(
    pair: &FeaturePair,
    g_phi_q: &Array,
    g_phi_k: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
    variance_is_constant: bool,
) -> Result<(Array, Array, Array, Array)> {
    let qs = acfg.query_scale();
    match &pair.trace {
        PairTrace::Separate { q, k } => {
            let gq = feature_map_backward(q, g_phi_q, params, mcfg, variance_is_constant)?;
            let gk = feature_map_backward(k, g_phi_k, params, mcfg, variance_is_constant)?;
            let d_theta = add(&gq.d_theta, &gk.d_theta);
            let d_uc = add(&gq.d_uc, &gk.d_uc);
            Ok((d_theta, d_uc, gq.d_x.scale(qs), gk.d_x))
        }
        PairTrace::Shared { trace, nq } => {
            let g = concat_heads_tokens(g_phi_q, g_phi_k)?;
            let gr = feature_map_backward(trace, &g, params, mcfg, variance_is_constant)?;
            let total = trace.input.shape()[1];
            let d_q = slice_rows(&gr.d_x, 0, *nq)?.scale(qs);
            let d_k = slice_rows(&gr.d_x, *nq, total)?;
            Ok((gr.d_theta, gr.d_uc, d_q, d_k))
        }
    }
}

fn add(a: &Array, b: &Array) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Array::from_vec(a.shape(), data).expect("same shape")
}

/// Loss and all gradients of `loss(linear_attention(q, k, v))`.
pub fn backward_full(
    q: &Array,
    k: &Array,
    v: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
    loss: &LossSpec,
) -> Result<GradBundle> {
    let pair = map_features(q, k, params, mcfg, acfg, None)?;
    let fwd = linear_reordered_from_features(
        &pair.phi_q,
        &pair.phi_k,
        v,
        acfg.denom_eps,
        &mut BufferMeter::new(),
    )?;
    let value = loss.value(&fwd.out)?;
    let g_out = loss.gradient(&fwd.out)?;
    let ag = attention_backward(&pair.phi_q, &pair.phi_k, v, &fwd, &g_out)?;
    let (d_theta, d_uc, d_q, d_k) =
        feature_pair_backward(&pair, &ag.d_phi_q, &ag.d_phi_k, params, mcfg, acfg, false)?;
    let bundle = GradBundle { d_theta, d_uc, d_q, d_k, d_v: ag.d_v, loss: value };
    let finite = [&bundle.d_theta, &bundle.d_uc, &bundle.d_q, &bundle.d_k, &bundle.d_v]
        .iter()
        .all(|a| a.all_finite());
    if !finite || !value.is_finite() {
        return Err(Error::NonFinite("backward intermediates".into()));
    }
    Ok(bundle)
}

/// Loss through the direct (`N x N`) form, optionally with frozen block
/// variances. This is the finite-difference objective.
#[allow(clippy::too_many_arguments)]
pub fn loss_value(
    q: &Array,
    k: &Array,
    v: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
    loss: &LossSpec,
    frozen: Option<&FrozenVariance>,
) -> Result<f64> {
    let pair = map_features(q, k, params, mcfg, acfg, frozen)?;
    let fwd = linear_direct_from_features(
        &pair.phi_q,
        &pair.phi_k,
        v,
        acfg.denom_eps,
        &mut BufferMeter::new(),
    )?;
    loss.value(&fwd.out)
}

/// Parameter groups compared by [`gradcheck_suite`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Theta,
    Uc,
    Q,
    K,
    V,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] =
        [ParamGroup::Theta, ParamGroup::Uc, ParamGroup::Q, ParamGroup::K, ParamGroup::V];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Theta => "theta",
            ParamGroup::Uc => "u_c",
            ParamGroup::Q => "q",
            ParamGroup::K => "k",
            ParamGroup::V => "v",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub stop_grad_variance: bool,
    /// Worst acceptable relative error per group.
    pub tolerance: f64,
    pub step: f64,
    /// Fault injection: add a constant to one analytic gradient group.
    pub corrupt: Option<(ParamGroup, f64)>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { stop_grad_variance: true, tolerance: 1e-5, step: DEFAULT_STEP, corrupt: None }
    }
}

/// Pre-activations closer than this to zero trigger a resample.
pub const KINK_MARGIN: f64 = 1e-4;
/// Smallest block variance allowed when differentiating through it.
pub const MIN_DIFFERENTIATED_VARIANCE: f64 = 1e-2;
/// Gradients are compared relative to at least this fraction of
/// `max(1, |loss|)`; below it central differences at `h = 1e-5` are
/// dominated by rounding (`~eps |loss| / h`).
pub const REL_ERR_FLOOR: f64 = 1e-4;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub stop_grad_variance: bool,
    pub trials: usize,
    /// Candidate instances rejected for sitting near a kink or a tiny variance.
    pub resamples: usize,
    pub tolerance: f64,
    /// Worst relative error per group over all trials.
    pub worst: Vec<(ParamGroup, f64)>,
}

impl GradcheckReport {
    pub fn worst_for(&self, group: ParamGroup) -> f64 {
        self.worst.iter().find(|(g, _)| *g == group).map(|(_, e)| *e).unwrap_or(f64::NAN)
    }

    /// Groups whose worst error is not below the tolerance.
    pub fn flagged(&self) -> Vec<ParamGroup> {
        self.worst.iter().filter(|(_, e)| !(*e < self.tolerance)).map(|(g, _)| *g).collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }
}

/// `max |a - n| / max(|a|_inf, |n|_inf, REL_ERR_FLOOR * max(1, |loss|))`.
pub fn relative_error(analytic: &Array, numeric: &Array, loss: f64) -> f64 {
    let floor = REL_ERR_FLOOR * loss.abs().max(1.0);
    let scale = analytic.max_abs().max(numeric.max_abs()).max(floor);
    analytic.max_abs_diff(numeric) / scale
}

/// A random small instance for gradient checking.
#[derive(Clone, Debug)]
pub struct GradInstance {
    pub q: Array,
    pub k: Array,
    pub v: Array,
    pub params: MirrorParams,
    pub mcfg: ModulationConfig,
    pub acfg: AttentionConfig,
}

fn sample_instance(rng: &mut Rng, stop_grad: bool) -> Result<GradInstance> {
    let b = rng.int_range(1, 2);
    let h = rng.int_range(1, 2);
    let d = 2 * rng.int_range(1, 2);
    let nq = rng.int_range(1, 4);
    let nk = rng.int_range(2, 4);
    let dv = rng.int_range(1, 3);
    let q = rng.normal_array(&[b, nq, h * d]);
    let k = rng.normal_array(&[b, nk, h * d]);
    let v = rng.normal_array(&[b, h, nk, dv]);
    let params = MirrorParams::random(rng, h, d)?;
    let mcfg = ModulationConfig {
        lambda: rng.uniform_range(0.25, 2.0),
        stop_grad_variance: stop_grad,
        ..Default::default()
    };
    let acfg = AttentionConfig {
        scale_qk: rng.bool(),
        shared_stats: rng.bool(),
        ..AttentionConfig::new(h, d)
    };
    Ok(GradInstance { q, k, v, params, mcfg, acfg })
}

fn admissible(inst: &GradInstance, pair: &FeaturePair) -> bool {
    let traces: Vec<&FeatureMapTrace> = match &pair.trace {
        PairTrace::Separate { q, k } => vec![q, k],
        PairTrace::Shared { trace, .. } => vec![trace],
    };
    traces.iter().all(|t| {
        let clear = t.pre_activation.data().iter().all(|z| z.abs() >= KINK_MARGIN);
        let var_ok = inst.mcfg.stop_grad_variance
            || t.stats.variance.data().iter().all(|&s| s >= MIN_DIFFERENTIATED_VARIANCE);
        clear && var_ok
    })
}

/// Draws an admissible instance; returns it with the number of rejections.
pub fn sample_admissible(rng: &mut Rng, stop_grad: bool) -> Result<(GradInstance, usize)> {
    for rejected in 0..MAX_RESAMPLES {
        let inst = sample_instance(rng, stop_grad)?;
        let pair = map_features(&inst.q, &inst.k, &inst.params, &inst.mcfg, &inst.acfg, None)?;
        if admissible(&inst, &pair) {
            return Ok((inst, rejected));
        }
    }
    Err(Error::InvalidArgument("no admissible gradient-check instance found".into()))
}

/// Extrapolated finite-difference gradients of every group for one instance.
pub fn numeric_gradients(inst: &GradInstance, loss: &LossSpec, step: f64) -> Result<[Array; 5]> {
    let GradInstance { q, k, v, params, mcfg, acfg } = inst;
    let frozen = if mcfg.stop_grad_variance && !mcfg.disable_modulation {
        Some(map_features(q, k, params, mcfg, acfg, None)?.trace.frozen_variance())
    } else {
        None
    };
    let frozen = frozen.as_ref();
    let f_theta = |t: &Array| {
        let p = MirrorParams::new(MirrorAngles::new(t.clone())?, params.mirror.clone())?;
        loss_value(q, k, v, &p, mcfg, acfg, loss, frozen)
    };
    let f_uc = |u: &Array| {
        let p = MirrorParams::new(params.angles.clone(), GlobalMirror::new(u.clone())?)?;
        loss_value(q, k, v, &p, mcfg, acfg, loss, frozen)
    };
    let f_q = |x: &Array| loss_value(x, k, v, params, mcfg, acfg, loss, frozen);
    let f_k = |x: &Array| loss_value(q, x, v, params, mcfg, acfg, loss, frozen);
    let f_v = |x: &Array| loss_value(q, k, x, params, mcfg, acfg, loss, frozen);
    Ok([
        extrapolated_diff(f_theta, params.angles.as_array(), step)?,
        extrapolated_diff(f_uc, params.mirror.as_array(), step)?,
        extrapolated_diff(f_q, q, step)?,
        extrapolated_diff(f_k, k, step)?,
        extrapolated_diff(f_v, v, step)?,
    ])
}

/// Compares [`backward_full`] with central differences on `trials` random
/// instances and reports the worst relative error per parameter group.
pub fn gradcheck_suite(seed: u64, trials: usize, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("gradcheck needs at least one trial".into()));
    }
    let mut rng = Rng::new(seed);
    let mut worst = [0.0f64; 5];
    let mut resamples = 0;
    let loss = LossSpec::SumSquares;
    for _ in 0..trials {
        let (inst, rejected) = sample_admissible(&mut rng, opts.stop_grad_variance)?;
        resamples += rejected;
        let g = backward_full(&inst.q, &inst.k, &inst.v, &inst.params, &inst.mcfg, &inst.acfg, &loss)?;
        let loss_value = g.loss;
        let mut analytic = [g.d_theta, g.d_uc, g.d_q, g.d_k, g.d_v];
        if let Some((group, offset)) = opts.corrupt {
            let idx = ParamGroup::ALL.iter().position(|&p| p == group).expect("known group");
            analytic[idx] = analytic[idx].map(|x| x + offset);
        }
        let numeric = numeric_gradients(&inst, &loss, opts.step)?;
        for (w, (a, n)) in worst.iter_mut().zip(analytic.iter().zip(&numeric)) {
            *w = w.max(relative_error(a, n, loss_value));
        }
    }
    Ok(GradcheckReport {
        stop_grad_variance: opts.stop_grad_variance,
        trials,
        resamples,
        tolerance: opts.tolerance,
        worst: ParamGroup::ALL.iter().copied().zip(worst).collect(),
    })
}
