//! Softmax reference attention and kernelised linear attention.
//!
//! Queries and keys are `[B, N, H*D]` token rows; values are already split
//! into heads, `[B, H, N, Dv]`. All forms are non-causal.

use crate::featmap::{
    feature_map_traced, mirror_features_joint, split_heads, FeatureMapTrace, ModulationConfig,
    MirrorParams, VarianceSource,
};
use crate::numerics::Array;
use crate::reflect::{dims3, dims4, reflect_pair};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    /// Added to every linear-attention normaliser.
    pub denom_eps: f64,
    /// Multiply queries by `1/sqrt(head_dim)` before the feature map.
    pub scale_qk: bool,
    /// Compute one set of block statistics over the union of query and key
    /// tokens instead of separate ones.
    pub shared_stats: bool,
}

impl AttentionConfig {
    pub fn new(heads: usize, head_dim: usize) -> Self {
        Self { heads, head_dim, denom_eps: 1e-6, scale_qk: true, shared_stats: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::InvalidArgument("heads and head_dim must be >= 1".into()));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::OddDimension(self.head_dim));
        }
        if !(self.denom_eps > 0.0 && self.denom_eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "denom_eps must be > 0, got {}",
                self.denom_eps
            )));
        }
        Ok(())
    }

    pub fn query_scale(&self) -> f64 {
        if self.scale_qk {
            1.0 / (self.head_dim as f64).sqrt()
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `[B, H, N, Dv]`.
    pub out: Array,
    /// `[B, H, N]` normalisers (guard included for linear attention).
    pub denom: Array,
    /// Query tokens whose unguarded linear normaliser was exactly zero.
    pub truncated_tokens: usize,
}

/// Tracks live and peak bytes of the transient buffers an attention call
/// allocates. Inputs and the returned output are not counted.
#[derive(Clone, Debug, Default)]
pub struct BufferMeter {
    current: usize,
    peak: usize,
}

impl BufferMeter {
    pub fn new() -> Self {
        Self::default()
    }

    fn acquire(&mut self, len: usize) -> Vec<f64> {
        self.current += len * std::mem::size_of::<f64>();
        self.peak = self.peak.max(self.current);
        vec![0.0; len]
    }

    fn release(&mut self, buf: Vec<f64>) {
        self.current -= buf.len() * std::mem::size_of::<f64>();
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak
    }
}

struct Extents {
    b: usize,
    nq: usize,
    nk: usize,
    h: usize,
    d: usize,
    dv: usize,
}

fn check_qkv(q: &Array, k: &Array, v: &Array, cfg: &AttentionConfig) -> Result<Extents> {
    cfg.validate()?;
    let [b, nq, fq] = dims3(q)?;
    let [bk, nk, fk] = dims3(k)?;
    let [bv, hv, nv, dv] = dims4(v)?;
    let f = cfg.heads * cfg.head_dim;
    if fq != f || fk != f {
        return Err(Error::Shape(format!(
            "query/key width {fq}/{fk} does not match {} heads x {}",
            cfg.heads, cfg.head_dim
        )));
    }
    if bk != b || bv != b || hv != cfg.heads || nv != nk {
        return Err(Error::Shape(format!(
            "values {:?} do not conform to keys {:?} with {} heads",
            v.shape(),
            k.shape(),
            cfg.heads
        )));
    }
    Ok(Extents { b, nq, nk, h: cfg.heads, d: cfg.head_dim, dv })
}

/// Query rows per tile of the softmax kernel.
const SOFTMAX_TILE: usize = 32;

/// Keys per block in the weighted sum of values.
const SOFTMAX_VALUE_BLOCK: usize = 64;
/// Output columns accumulated together in registers.
const OUT_LANES: usize = 8;

/// Inner loops of the softmax kernel. Implementations differ only in vector
/// width, never in rounding: every lane is a separate multiply then add in
/// the same order, so all of them give identical results.
trait Lanes {
    /// Scores of one key row against a transposed query tile
    /// (`kr.len() x SOFTMAX_TILE`).
    fn tile_dot(q_tile: &[f64], kr: &[f64]) -> [f64; SOFTMAX_TILE];
    /// `acc += sum_i ws[i] * v[i * dv..][..OUT_LANES]`, in key order.
    fn weighted_sum(acc: &mut [f64; OUT_LANES], ws: &[f64], v: &[f64], dv: usize);
}

struct ScalarLanes;

impl Lanes for ScalarLanes {
    #[inline(always)]
    fn tile_dot(q_tile: &[f64], kr: &[f64]) -> [f64; SOFTMAX_TILE] {
        let mut sc = [0.0; SOFTMAX_TILE];
        for (col, &kj) in q_tile.chunks_exact(SOFTMAX_TILE).zip(kr) {
            sc.iter_mut().zip(col).for_each(|(s, x)| *s += x * kj);
        }
        sc
    }

    #[inline(always)]
    fn weighted_sum(acc: &mut [f64; OUT_LANES], ws: &[f64], v: &[f64], dv: usize) {
        for (i, &w) in ws.iter().enumerate() {
            acc.iter_mut().zip(&v[i * dv..][..OUT_LANES]).for_each(|(a, x)| *a += w * x);
        }
    }
}

/// Only reachable once AVX has been detected at runtime.
#[cfg(target_arch = "x86_64")]
struct AvxLanes;

#[cfg(target_arch = "x86_64")]
impl AvxLanes {
    #[inline]
    #[target_feature(enable = "avx")]
    unsafe fn tile_dot_avx(q_tile: &[f64], kr: &[f64]) -> [f64; SOFTMAX_TILE] {
        use std::arch::x86_64::*;
        const V: usize = SOFTMAX_TILE / 4;
        assert!(q_tile.len() >= kr.len() * SOFTMAX_TILE);
        let mut s = [_mm256_setzero_pd(); V];
        for (j, &kj) in kr.iter().enumerate() {
            let kv = _mm256_set1_pd(kj);
            let col = q_tile.as_ptr().add(j * SOFTMAX_TILE);
            for (l, sl) in s.iter_mut().enumerate() {
                *sl = _mm256_add_pd(*sl, _mm256_mul_pd(_mm256_loadu_pd(col.add(4 * l)), kv));
            }
        }
        let mut out = [0.0; SOFTMAX_TILE];
        for (l, sl) in s.iter().enumerate() {
            _mm256_storeu_pd(out.as_mut_ptr().add(4 * l), *sl);
        }
        out
    }

    #[inline]
    #[target_feature(enable = "avx")]
    unsafe fn weighted_sum_avx(acc: &mut [f64; OUT_LANES], ws: &[f64], v: &[f64], dv: usize) {
        use std::arch::x86_64::*;
        if let Some(last) = ws.len().checked_sub(1) {
            assert!(v.len() >= last * dv + OUT_LANES);
        }
        let mut a0 = _mm256_loadu_pd(acc.as_ptr());
        let mut a1 = _mm256_loadu_pd(acc.as_ptr().add(4));
        for (i, &w) in ws.iter().enumerate() {
            let wv = _mm256_set1_pd(w);
            let row = v.as_ptr().add(i * dv);
            a0 = _mm256_add_pd(a0, _mm256_mul_pd(wv, _mm256_loadu_pd(row)));
            a1 = _mm256_add_pd(a1, _mm256_mul_pd(wv, _mm256_loadu_pd(row.add(4))));
        }
        _mm256_storeu_pd(acc.as_mut_ptr(), a0);
        _mm256_storeu_pd(acc.as_mut_ptr().add(4), a1);
    }
}

#[cfg(target_arch = "x86_64")]
impl Lanes for AvxLanes {
    #[inline(always)]
    fn tile_dot(q_tile: &[f64], kr: &[f64]) -> [f64; SOFTMAX_TILE] {
        // SAFETY: AvxLanes is only used by the AVX-enabled kernel entry point.
        unsafe { Self::tile_dot_avx(q_tile, kr) }
    }

    #[inline(always)]
    fn weighted_sum(acc: &mut [f64; OUT_LANES], ws: &[f64], v: &[f64], dv: usize) {
        // SAFETY: as above.
        unsafe { Self::weighted_sum_avx(acc, ws, v, dv) }
    }
}

/// One `(batch, head)` slice of softmax attention.
struct SoftmaxSlice<'a> {
    /// Query rows, `nq` rows of `d` values at stride `stride`.
    q: &'a [f64],
    k: &'a [f64],
    stride: usize,
    nq: usize,
    nk: usize,
    d: usize,
    dv: usize,
    scale: f64,
    /// `nk x dv`.
    v: &'a [f64],
}

impl SoftmaxSlice<'_> {
    /// Writes the unnormalised weights `exp(s - max)` of every query row into
    /// `weights` (`nq x nk`), the outputs into `out` (`nq x dv`) and the row
    /// sums into `denom`.
    ///
    /// Query rows go in tiles so each key row is loaded once per tile.
    /// Scores of a key block land in a small key-major buffer and are then
    /// copied out row by row, which keeps writes to `weights` contiguous.
    #[inline(always)]
    fn run<V: Lanes>(&self, bufs: &mut SoftmaxBuffers, out: &mut [f64], denom: &mut [f64]) {
        let (nk, d, dv) = (self.nk, self.d, self.dv);
        let SoftmaxBuffers { weights, q_tile, scores, acc } = bufs;
        let (weights, q_tile, scores, acc) =
            (&mut weights[..], &mut q_tile[..], &mut scores[..], &mut acc[..]);
        let mut maxes = [0.0; SOFTMAX_TILE];
        let mut sums = [0.0; SOFTMAX_TILE];
        for t0 in (0..self.nq).step_by(SOFTMAX_TILE) {
            let rows = (t0 + SOFTMAX_TILE).min(self.nq) - t0;
            // transposed query tile, d x SOFTMAX_TILE, zero past the last row
            q_tile.iter_mut().for_each(|x| *x = 0.0);
            for r in 0..rows {
                for (j, &x) in self.q[(t0 + r) * self.stride..][..d].iter().enumerate() {
                    q_tile[j * SOFTMAX_TILE + r] = x;
                }
            }
            let tile = &mut weights[t0 * nk..(t0 + rows) * nk];
            maxes.iter_mut().for_each(|m| *m = f64::NEG_INFINITY);
            for i0 in (0..nk).step_by(SOFTMAX_TILE) {
                let keys = (i0 + SOFTMAX_TILE).min(nk) - i0;
                // key-major scores of this block, written contiguously
                for ii in 0..keys {
                    let kr = &self.k[(i0 + ii) * self.stride..][..d];
                    let sc = V::tile_dot(q_tile, kr);
                    scores[ii * SOFTMAX_TILE..(ii + 1) * SOFTMAX_TILE].copy_from_slice(&sc);
                }
                for r in 0..rows {
                    let row = &mut tile[r * nk + i0..r * nk + i0 + keys];
                    for (ii, w) in row.iter_mut().enumerate() {
                        let sc = scores[ii * SOFTMAX_TILE + r] * self.scale;
                        *w = sc;
                        maxes[r] = maxes[r].max(sc);
                    }
                }
            }
            for r in 0..rows {
                let mut s = 0.0;
                for w in &mut tile[r * nk..(r + 1) * nk] {
                    *w = (*w - maxes[r]).exp();
                    s += *w;
                }
                sums[r] = s;
            }
            // keys in blocks so the value rows of a block stay in cache while
            // every row of the tile consumes them
            let acc = &mut acc[..rows * dv];
            acc.iter_mut().for_each(|a| *a = 0.0);
            for i0 in (0..nk).step_by(SOFTMAX_VALUE_BLOCK) {
                let i1 = (i0 + SOFTMAX_VALUE_BLOCK).min(nk);
                for (r, ar) in acc.chunks_exact_mut(dv).enumerate() {
                    let ws = &tile[r * nk + i0..r * nk + i1];
                    let mut lanes = ar.chunks_exact_mut(OUT_LANES);
                    for (c, chunk) in (&mut lanes).enumerate() {
                        let chunk: &mut [f64; OUT_LANES] = chunk.try_into().unwrap();
                        V::weighted_sum(chunk, ws, &self.v[i0 * dv + c * OUT_LANES..], dv);
                    }
                    let tail = lanes.into_remainder();
                    let c0 = dv - tail.len();
                    for (i, &w) in (i0..i1).zip(ws) {
                        let vr = &self.v[i * dv + c0..(i + 1) * dv];
                        tail.iter_mut().zip(vr).for_each(|(a, x)| *a += w * x);
                    }
                }
            }
            for (r, ar) in acc.chunks_exact(dv).enumerate() {
                let inv = 1.0 / sums[r];
                let orow = &mut out[(t0 + r) * dv..(t0 + r + 1) * dv];
                orow.iter_mut().zip(ar).for_each(|(o, a)| *o = a * inv);
                denom[t0 + r] = sums[r];
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx")]
    unsafe fn run_avx(&self, bufs: &mut SoftmaxBuffers, out: &mut [f64], denom: &mut [f64]) {
        self.run::<AvxLanes>(bufs, out, denom)
    }

    /// [`Self::run`] with 256-bit vectors when the CPU has them. No fused
    /// multiply-adds are introduced, so results are identical.
    fn dispatch(&self, bufs: &mut SoftmaxBuffers, out: &mut [f64], denom: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { self.run_avx(bufs, out, denom) };
        }
        self.run::<ScalarLanes>(bufs, out, denom)
    }
}

/// Transient buffers of the softmax kernel.
struct SoftmaxBuffers {
    /// `nq x nk` weights.
    weights: Vec<f64>,
    /// `d x SOFTMAX_TILE` transposed query tile.
    q_tile: Vec<f64>,
    /// `SOFTMAX_TILE x SOFTMAX_TILE` key-major scores of one key block.
    scores: Vec<f64>,
    /// `SOFTMAX_TILE x dv` output accumulators.
    acc: Vec<f64>,
}

/// Softmax attention with `1/sqrt(d)` scaling and max subtraction.
pub fn softmax_attention(
    q: &Array,
    k: &Array,
    v: &Array,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    softmax_attention_metered(q, k, v, cfg, &mut BufferMeter::new())
}

/// [`softmax_attention`] that materialises the full `Nq x Nk` weight matrix
/// (reused across heads) and reports it to `meter`.
pub fn softmax_attention_metered(
    q: &Array,
    k: &Array,
    v: &Array,
    cfg: &AttentionConfig,
    meter: &mut BufferMeter,
) -> Result<AttentionOutput> {
    let Extents { b, nq, nk, h, d, dv } = check_qkv(q, k, v, cfg)?;
    let f = h * d;
    let mut out = Array::zeros(&[b, h, nq, dv]);
    let mut denom = Array::zeros(&[b, h, nq]);
    let mut bufs = SoftmaxBuffers {
        weights: meter.acquire(nq * nk),
        q_tile: meter.acquire(d * SOFTMAX_TILE),
        scores: meter.acquire(SOFTMAX_TILE * SOFTMAX_TILE),
        acc: meter.acquire(SOFTMAX_TILE * dv),
    };
    for bi in 0..b {
        for hi in 0..h {
            let bh = bi * h + hi;
            let slice = SoftmaxSlice {
                q: &q.data()[bi * nq * f + hi * d..],
                k: &k.data()[bi * nk * f + hi * d..],
                stride: f,
                nq,
                nk,
                d,
                dv,
                scale: 1.0 / (d as f64).sqrt(),
                v: &v.data()[bh * nk * dv..(bh + 1) * nk * dv],
            };
            slice.dispatch(
                &mut bufs,
                &mut out.data_mut()[bh * nq * dv..(bh + 1) * nq * dv],
                &mut denom.data_mut()[bh * nq..(bh + 1) * nq],
            );
        }
    }
    meter.release(bufs.acc);
    meter.release(bufs.scores);
    meter.release(bufs.q_tile);
    meter.release(bufs.weights);
    Ok(AttentionOutput { out, denom, truncated_tokens: 0 })
}

/// Block statistics frozen at a reference point; see [`map_features`].
#[derive(Clone, Debug)]
pub enum FrozenVariance {
    Separate { q: Array, k: Array },
    Shared(Array),
}

/// Feature-map evaluations for one query/key pair.
#[derive(Clone, Debug)]
pub enum PairTrace {
    Separate { q: FeatureMapTrace, k: FeatureMapTrace },
    /// One trace over the query tokens followed by the key tokens.
    Shared { trace: FeatureMapTrace, nq: usize },
}

impl PairTrace {
    pub fn frozen_variance(&self) -> FrozenVariance {
        match self {
            PairTrace::Separate { q, k } => FrozenVariance::Separate {
                q: q.stats.variance.clone(),
                k: k.stats.variance.clone(),
            },
            PairTrace::Shared { trace, .. } => FrozenVariance::Shared(trace.stats.variance.clone()),
        }
    }
}

/// Mapped queries and keys, `[B, H, N, D]` each.
#[derive(Clone, Debug)]
pub struct FeaturePair {
    pub phi_q: Array,
    pub phi_k: Array,
    pub trace: PairTrace,
}

/// Runs the reflecting feature map on queries and keys.
///
/// Queries are scaled by [`AttentionConfig::query_scale`] first. With
/// `shared_stats` the two token sets are concatenated so they see the same
/// block statistics and therefore the same effective angles.
pub fn map_features(
    q: &Array,
    k: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
    frozen: Option<&FrozenVariance>,
) -> Result<FeaturePair> {
    acfg.validate()?;
    if params.heads() != acfg.heads || params.head_dim() != acfg.head_dim {
        return Err(Error::Shape(format!(
            "parameters are for {}x{} but the attention config is {}x{}",
            params.heads(),
            params.head_dim(),
            acfg.heads,
            acfg.head_dim
        )));
    }
    let [b, nq, f] = dims3(q)?;
    let [bk, nk, fk] = dims3(k)?;
    if bk != b || fk != f {
        return Err(Error::Shape(format!("queries {:?} vs keys {:?}", q.shape(), k.shape())));
    }
    let qs = q.scale(acfg.query_scale());
    if acfg.shared_stats {
        let joined = concat_tokens(&qs, k)?;
        let source = match frozen {
            None => VarianceSource::Computed,
            Some(FrozenVariance::Shared(v)) => VarianceSource::Frozen(v),
            Some(_) => {
                return Err(Error::InvalidArgument("separate frozen stats with shared mode".into()))
            }
        };
        let trace = feature_map_traced(&joined, params, mcfg, source)?;
        let phi_q = slice_tokens(&trace.output, 0, nq)?;
        let phi_k = slice_tokens(&trace.output, nq, nq + nk)?;
        Ok(FeaturePair { phi_q, phi_k, trace: PairTrace::Shared { trace, nq } })
    } else {
        let (sq, sk) = match frozen {
            None => (VarianceSource::Computed, VarianceSource::Computed),
            Some(FrozenVariance::Separate { q, k }) => {
                (VarianceSource::Frozen(q), VarianceSource::Frozen(k))
            }
            Some(_) => {
                return Err(Error::InvalidArgument("shared frozen stats with separate mode".into()))
            }
        };
        let tq = feature_map_traced(&qs, params, mcfg, sq)?;
        let tk = feature_map_traced(k, params, mcfg, sk)?;
        Ok(FeaturePair {
            phi_q: tq.output.clone(),
            phi_k: tk.output.clone(),
            trace: PairTrace::Separate { q: tq, k: tk },
        })
    }
}

/// Forward-only [`map_features`]: the same `(phi_q, phi_k)`, bitwise, without
/// keeping the intermediates.
pub fn feature_pair(
    q: &Array,
    k: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
) -> Result<(Array, Array)> {
    acfg.validate()?;
    if params.heads() != acfg.heads || params.head_dim() != acfg.head_dim {
        return Err(Error::Shape(format!(
            "parameters are for {}x{} but the attention config is {}x{}",
            params.heads(),
            params.head_dim(),
            acfg.heads,
            acfg.head_dim
        )));
    }
    let qs = (q, acfg.query_scale());
    if acfg.shared_stats {
        let mut both = mirror_features_joint(&[qs, (k, 1.0)], params, mcfg)?;
        let phi_k = both.pop().expect("two parts");
        Ok((both.pop().expect("two parts"), phi_k))
    } else {
        let phi_q = mirror_features_joint(&[qs], params, mcfg)?.pop().expect("one part");
        let phi_k = mirror_features_joint(&[(k, 1.0)], params, mcfg)?.pop().expect("one part");
        Ok((phi_q, phi_k))
    }
}

/// `[B, N1, F] ++ [B, N2, F] -> [B, N1 + N2, F]`.
pub fn concat_tokens(a: &Array, b: &Array) -> Result<Array> {
    let [ba, na, f] = dims3(a)?;
    let [bb, nb, fb] = dims3(b)?;
    if ba != bb || f != fb {
        return Err(Error::Shape(format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for bi in 0..ba {
        data.extend_from_slice(&a.data()[bi * na * f..(bi + 1) * na * f]);
        data.extend_from_slice(&b.data()[bi * nb * f..(bi + 1) * nb * f]);
    }
    Array::from_vec(&[ba, na + nb, f], data)
}

/// Tokens `start..end` of a `[B, H, N, D]` tensor.
pub fn slice_tokens(x: &Array, start: usize, end: usize) -> Result<Array> {
    let [b, h, n, d] = dims4(x)?;
    if start >= end || end > n {
        return Err(Error::Shape(format!("token range {start}..{end} outside 0..{n}")));
    }
    let len = end - start;
    let mut data = Vec::with_capacity(b * h * len * d);
    for bh in 0..b * h {
        data.extend_from_slice(&x.data()[(bh * n + start) * d..(bh * n + end) * d]);
    }
    Array::from_vec(&[b, h, len, d], data)
}

fn check_features(phi_q: &Array, phi_k: &Array, v: &Array) -> Result<Extents> {
    let [b, h, nq, d] = dims4(phi_q)?;
    let [bk, hk, nk, dk] = dims4(phi_k)?;
    let [bv, hv, nv, dv] = dims4(v)?;
    if bk != b || hk != h || dk != d || bv != b || hv != h || nv != nk {
        return Err(Error::Shape(format!(
            "features {:?}/{:?} and values {:?} do not conform",
            phi_q.shape(),
            phi_k.shape(),
            v.shape()
        )));
    }
    Ok(Extents { b, nq, nk, h, d, dv })
}

/// Left-to-right evaluation: builds the `Nq x Nk` kernel `phi_q phi_k^T`.
pub fn linear_direct_from_features(
    phi_q: &Array,
    phi_k: &Array,
    v: &Array,
    denom_eps: f64,
    meter: &mut BufferMeter,
) -> Result<AttentionOutput> {
    let Extents { b, nq, nk, h, d, dv } = check_features(phi_q, phi_k, v)?;
    let mut out = Array::zeros(&[b, h, nq, dv]);
    let mut denom = Array::zeros(&[b, h, nq]);
    let mut truncated = 0;
    let mut kernel = meter.acquire(nq * nk);
    for bh in 0..b * h {
        let qs = &phi_q.data()[bh * nq * d..][..nq * d];
        let ks = &phi_k.data()[bh * nk * d..][..nk * d];
        let vs = &v.data()[bh * nk * dv..][..nk * dv];
        for (t, qr) in qs.chunks_exact(d).enumerate() {
            for (i, kr) in ks.chunks_exact(d).enumerate() {
                kernel[t * nk + i] = qr.iter().zip(kr).map(|(a, c)| a * c).sum();
            }
        }
        for t in 0..nq {
            let row = &kernel[t * nk..(t + 1) * nk];
            let raw: f64 = row.iter().sum();
            if raw == 0.0 {
                truncated += 1;
            }
            let den = raw + denom_eps;
            denom.data_mut()[bh * nq + t] = den;
            let orow = &mut out.data_mut()[(bh * nq + t) * dv..][..dv];
            for (w, vr) in row.iter().zip(vs.chunks_exact(dv)) {
                orow.iter_mut().zip(vr).for_each(|(o, x)| *o += w * x);
            }
            orow.iter_mut().for_each(|o| *o /= den);
        }
    }
    meter.release(kernel);
    Ok(AttentionOutput { out, denom, truncated_tokens: truncated })
}

/// Right-to-left evaluation: `S = sum_i phi_k_i^T v_i`, `z = sum_j phi_k_j`,
/// then `o_t = phi_q_t S / (phi_q_t z + eps)`. Work is `O(N D Dv)` and the
/// only transient buffers are `S`, `z` and one output row.
pub fn linear_reordered_from_features(
    phi_q: &Array,
    phi_k: &Array,
    v: &Array,
    denom_eps: f64,
    meter: &mut BufferMeter,
) -> Result<AttentionOutput> {
    let Extents { b, nq, nk, h, d, dv } = check_features(phi_q, phi_k, v)?;
    let mut out = Array::zeros(&[b, h, nq, dv]);
    let mut denom = Array::zeros(&[b, h, nq]);
    let mut truncated = 0;
    let mut s = meter.acquire(d * dv);
    let mut z = meter.acquire(d);
    let mut num = meter.acquire(dv);
    for bh in 0..b * h {
        s.iter_mut().for_each(|x| *x = 0.0);
        z.iter_mut().for_each(|x| *x = 0.0);
        let ks = &phi_k.data()[bh * nk * d..][..nk * d];
        let vs = &v.data()[bh * nk * dv..][..nk * dv];
        for (kr, vr) in ks.chunks_exact(d).zip(vs.chunks_exact(dv)) {
            for (j, &kj) in kr.iter().enumerate() {
                z[j] += kj;
                if kj != 0.0 {
                    s[j * dv..(j + 1) * dv].iter_mut().zip(vr).for_each(|(a, x)| *a += kj * x);
                }
            }
        }
        let qs = &phi_q.data()[bh * nq * d..][..nq * d];
        for (t, qr) in qs.chunks_exact(d).enumerate() {
            num.iter_mut().for_each(|x| *x = 0.0);
            let mut raw = 0.0;
            for (j, &qj) in qr.iter().enumerate() {
                raw += qj * z[j];
                if qj != 0.0 {
                    num.iter_mut().zip(&s[j * dv..(j + 1) * dv]).for_each(|(a, x)| *a += qj * x);
                }
            }
            if raw == 0.0 {
                truncated += 1;
            }
            let den = raw + denom_eps;
            denom.data_mut()[bh * nq + t] = den;
            let orow = &mut out.data_mut()[(bh * nq + t) * dv..][..dv];
            orow.iter_mut().zip(&num).for_each(|(o, x)| *o = x / den);
        }
    }
    meter.release(num);
    meter.release(z);
    meter.release(s);
    Ok(AttentionOutput { out, denom, truncated_tokens: truncated })
}

/// Linear attention through the explicit `N x N` kernel.
pub fn linear_attention_direct(
    q: &Array,
    k: &Array,
    v: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    check_qkv(q, k, v, acfg)?;
    let (phi_q, phi_k) = feature_pair(q, k, params, mcfg, acfg)?;
    linear_direct_from_features(&phi_q, &phi_k, v, acfg.denom_eps, &mut BufferMeter::new())
}

/// Linear attention with the key/value summary computed first.
pub fn linear_attention_reordered(
    q: &Array,
    k: &Array,
    v: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    linear_attention_reordered_metered(q, k, v, params, mcfg, acfg, &mut BufferMeter::new())
}

/// [`linear_attention_reordered`] reporting the attention core's transient
/// buffers to `meter`. The mapped features, like the raw queries and keys
/// of the softmax path, count as per-token inputs and are not metered.
pub fn linear_attention_reordered_metered(
    q: &Array,
    k: &Array,
    v: &Array,
    params: &MirrorParams,
    mcfg: &ModulationConfig,
    acfg: &AttentionConfig,
    meter: &mut BufferMeter,
) -> Result<AttentionOutput> {
    check_qkv(q, k, v, acfg)?;
    let (phi_q, phi_k) = feature_pair(q, k, params, mcfg, acfg)?;
    linear_reordered_from_features(&phi_q, &phi_k, v, acfg.denom_eps, meter)
}

/// `ReLU` features of `[B, N, H*D]` rows, split into heads.
pub fn relu_features(x: &Array, heads: usize) -> Result<Array> {
    Ok(split_heads(x, heads)?.map(|v| v.max(0.0)))
}

/// `<phi(q), phi(k)>` accumulated block by block.
///
/// `q_angles`/`k_angles` are the effective angles of each block. The sum of
/// per-block 2D inner products equals the flat `D`-dimensional one.
pub fn blockwise_kernel(q: &[f64], k: &[f64], q_angles: &[f64], k_angles: &[f64]) -> Result<f64> {
    let d = q.len();
    if !d.is_multiple_of(2) {
        return Err(Error::OddDimension(d));
    }
    if k.len() != d || q_angles.len() != d / 2 || k_angles.len() != d / 2 {
        return Err(Error::Shape("blockwise kernel operands disagree".into()));
    }
    let mut total = 0.0;
    for m in 0..d / 2 {
        let (q1, q2) = reflect_pair(q_angles[m], q[2 * m], q[2 * m + 1]);
        let (k1, k2) = reflect_pair(k_angles[m], k[2 * m], k[2 * m + 1]);
        total += q1.max(0.0) * k1.max(0.0) + q2.max(0.0) * k2.max(0.0);
    }
    Ok(total)
}
