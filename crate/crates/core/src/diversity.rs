//! Activation diversity measurements.
//!
//! * [`mask_disagreement`] summarises how much the ReLU sign patterns of a
//!   token set differ from one another.
//! * [`collapse_construction`] builds a tightly clustered token set and shows
//!   that a fixed reflection truncates it uniformly while the modulated one
//!   can split it.
//! * [`covariance_mixing`] measures how the cross-head reflection moves
//!   covariance mass between heads while leaving the spectrum alone.
//! * [`topology_export`] projects normalised kernel rows to 2D.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use crate::attention::{concat_tokens, relu_features, slice_tokens};
use crate::featmap::{
    block_variance, feature_map_traced, split_heads, ActivationMask, MirrorParams,
    ModulationConfig, VarianceSource,
};
use crate::numerics::{matmul, norm2, pca_project, sym_eigenvalues, Array};
use crate::reflect::{dims3, dims4, global_reflect, householder_matrix, GlobalMirror, MirrorAngles};
use crate::{Error, Result, Rng};

/// Pairwise disagreement of activation masks within a token set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisagreementStats {
    /// Mean Hamming distance between the masks of two distinct tokens.
    pub mean_hamming: f64,
    /// Number of distinct mask rows.
    pub distinct_patterns: usize,
    /// Mean Euclidean distance between two distinct tokens, when the tokens
    /// were supplied.
    pub pairwise_dist_mean: Option<f64>,
}

impl DisagreementStats {
    /// Attaches the mean pairwise token distance of `tokens` (`[B, N, F]`).
    pub fn with_distances(mut self, tokens: &Array) -> Result<Self> {
        self.pairwise_dist_mean = Some(pairwise_dist_mean(tokens)?);
        Ok(self)
    }

    /// `mean_hamming / pairwise_dist_mean`, if distances are known and nonzero.
    pub fn ratio(&self) -> Option<f64> {
        self.pairwise_dist_mean.filter(|d| *d > 0.0).map(|d| self.mean_hamming / d)
    }
}

/// Disagreement statistics of a `[B, H, N, D]` mask.
///
/// Every `(b, h)` slice is a separate token set. `mean_hamming` averages the
/// per-slice means; `distinct_patterns` is the largest per-slice count.
pub fn mask_disagreement(masks: &ActivationMask) -> Result<DisagreementStats> {
    let [b, h, n, _] = dims4(masks.as_array())?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 tokens, got {n}")));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut hamming = 0.0;
    let mut distinct = 0;
    for bi in 0..b {
        for hi in 0..h {
            let rows: Vec<Vec<bool>> = (0..n).map(|t| masks.token(bi, hi, t)).collect();
            let mut total = 0usize;
            for i in 0..n {
                for j in i + 1..n {
                    total += rows[i].iter().zip(&rows[j]).filter(|(a, b)| a != b).count();
                }
            }
            hamming += total as f64 / pairs;
            let mut seen: Vec<&Vec<bool>> = Vec::new();
            for r in &rows {
                if !seen.contains(&r) {
                    seen.push(r);
                }
            }
            distinct = distinct.max(seen.len());
        }
    }
    Ok(DisagreementStats {
        mean_hamming: hamming / (b * h) as f64,
        distinct_patterns: distinct,
        pairwise_dist_mean: None,
    })
}

/// Mean `|x_t - x_t'|` over distinct token pairs, averaged over the batch.
pub fn pairwise_dist_mean(tokens: &Array) -> Result<f64> {
    let [b, n, f] = dims3(tokens)?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 tokens, got {n}")));
    }
    let mut total = 0.0;
    for bi in 0..b {
        let row = |t: usize| &tokens.data()[(bi * n + t) * f..(bi * n + t + 1) * f];
        for i in 0..n {
            for j in i + 1..n {
                let diff: Vec<f64> = row(i).iter().zip(row(j)).map(|(a, c)| a - c).collect();
                total += norm2(&diff);
            }
        }
    }
    Ok(total / (b * n * (n - 1) / 2) as f64)
}

/// Largest admissible cluster radius for [`collapse_construction`].
pub const MAX_SPREAD: f64 = 1e-3;
/// Tokens per constructed cluster.
pub const CLUSTER_TOKENS: usize = 16;
const MAX_ATTEMPTS: usize = 64;

/// One seeded instance of the oversmoothing constructions, with statistics
/// for the fixed (`unmodulated`) and variance-modulated maps.
#[derive(Clone, Debug)]
pub struct CollapseInstance {
    pub seed: u64,
    pub spread: f64,
    /// Construction attempts used (resampled while the boundary case failed
    /// to split).
    pub attempts: usize,
    /// Cluster centre, which is also the exact token mean.
    pub center: [f64; 2],
    /// `[1, N, 2]` tokens, each within `spread` of the centre.
    pub tokens: Array,
    /// Measured block variance of the tokens.
    pub variance: f64,
    /// Angle shift the modulation applies at that variance.
    pub delta_alpha: f64,
    /// Distance of the reflected centre from the nearest axis in the
    /// deep-margin case.
    pub margin: f64,
    /// Signed distance of the modulated reflected centre from the target axis
    /// in the boundary case.
    pub boundary_offset: f64,
    pub deep_unmodulated: DisagreementStats,
    pub deep_modulated: DisagreementStats,
    pub boundary_unmodulated: DisagreementStats,
    pub boundary_modulated: DisagreementStats,
}

impl CollapseInstance {
    /// The fixed reflection collapses the deep-margin cluster to one pattern.
    pub fn collapses_without_modulation(&self) -> bool {
        self.deep_unmodulated.distinct_patterns == 1 && self.deep_unmodulated.mean_hamming == 0.0
    }

    /// The modulated reflection splits the boundary-adjacent cluster.
    pub fn splits_with_modulation(&self) -> bool {
        self.boundary_modulated.distinct_patterns >= 2
    }

    /// The shift is saturated: `delta_alpha >= 0.999 alpha_max`.
    pub fn saturated(&self, cfg: &ModulationConfig) -> bool {
        self.delta_alpha >= 0.999 * cfg.alpha_max
    }

    /// The per-seed verdict: the deep-margin cluster collapses unmodulated.
    pub fn verdict(&self) -> Verdict {
        if self.collapses_without_modulation() {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// `(setting, stats)` rows in a fixed order.
    pub fn settings(&self) -> [(&'static str, &DisagreementStats); 4] {
        [
            ("deep_unmodulated", &self.deep_unmodulated),
            ("deep_modulated", &self.deep_modulated),
            ("boundary_unmodulated", &self.boundary_unmodulated),
            ("boundary_modulated", &self.boundary_modulated),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

fn single_block_params(theta: f64) -> Result<MirrorParams> {
    MirrorParams::new(
        MirrorAngles::new(Array::from_vec(&[1, 1], vec![theta])?)?,
        GlobalMirror::new(Array::from_vec(&[2], vec![1.0, 0.0])?)?,
    )
}

fn cluster_stats(tokens: &Array, theta: f64, cfg: &ModulationConfig) -> Result<DisagreementStats> {
    let params = single_block_params(theta)?;
    let trace = feature_map_traced(tokens, &params, cfg, VarianceSource::Computed)?;
    mask_disagreement(&trace.mask())?.with_distances(tokens)
}

/// Builds both oversmoothing constructions for one seed, on a single 2D
/// block with the cross-head reflection disabled.
///
/// A reflection across the line at angle `t` sends direction `phi` to
/// `2t - phi`.
///
/// * Deep margin: the base angle sends the centre to the middle of the
///   negative quadrant, so every token of the cluster is fully truncated by
///   the fixed map.
/// * Boundary: the base angle is chosen so that after the measured shift the
///   centre lands within `spread / 4` of a coordinate axis, so the tokens
///   straddle the ReLU boundary.
///
/// Both use the modulation hyperparameters of `cfg`.
pub fn collapse_construction(
    seed: u64,
    spread: f64,
    cfg: &ModulationConfig,
) -> Result<CollapseInstance> {
    if !(spread > 0.0 && spread <= MAX_SPREAD) {
        return Err(Error::InvalidArgument(format!(
            "spread must lie in (0, {MAX_SPREAD}], got {spread}"
        )));
    }
    cfg.validate()?;
    let modulated = ModulationConfig { disable_global: true, disable_modulation: false, ..*cfg };
    let fixed = ModulationConfig { disable_modulation: true, ..modulated };

    let mut rng = Rng::new(seed);
    for attempt in 1..=MAX_ATTEMPTS {
        let r = rng.uniform_range(0.5, 2.0);
        let phi = rng.uniform_range(0.0, 2.0 * PI);
        let center = [r * phi.cos(), r * phi.sin()];

        let mut delta = rng.normal_array(&[CLUSTER_TOKENS, 2]).into_vec();
        for c in 0..2 {
            let mean = delta.iter().skip(c).step_by(2).sum::<f64>() / CLUSTER_TOKENS as f64;
            delta.iter_mut().skip(c).step_by(2).for_each(|v| *v -= mean);
        }
        let widest = delta.chunks_exact(2).map(norm2).fold(0.0, f64::max);
        let fit = spread * rng.uniform_range(0.5, 1.0) / widest;
        let data: Vec<f64> = delta
            .chunks_exact(2)
            .flat_map(|dl| [center[0] + fit * dl[0], center[1] + fit * dl[1]])
            .collect();
        let tokens = Array::from_vec(&[1, CLUSTER_TOKENS, 2], data)?;

        let variance = block_variance(&split_heads(&tokens, 1)?)?.variance.data()[0];
        let delta_alpha = modulated.shift(variance);

        let deep_theta = (5.0 * FRAC_PI_4 + phi) / 2.0;
        let margin = r * FRAC_PI_4.sin();

        let axis = rng.int_range(0, 3) as f64 * FRAC_PI_2;
        let offset = rng.uniform_range(-0.25, 0.25) * spread;
        let target = axis + (offset / r).asin();
        let boundary_theta = (target + phi) / 2.0 - delta_alpha;

        let boundary_modulated = cluster_stats(&tokens, boundary_theta, &modulated)?;
        if boundary_modulated.distinct_patterns < 2 {
            continue;
        }
        return Ok(CollapseInstance {
            seed,
            spread,
            attempts: attempt,
            center,
            variance,
            delta_alpha,
            margin,
            boundary_offset: offset,
            deep_unmodulated: cluster_stats(&tokens, deep_theta, &fixed)?,
            deep_modulated: cluster_stats(&tokens, deep_theta, &modulated)?,
            boundary_unmodulated: cluster_stats(&tokens, boundary_theta, &fixed)?,
            boundary_modulated,
            tokens,
        });
    }
    Err(Error::Infeasible {
        attempts: MAX_ATTEMPTS,
        reason: format!("boundary cluster never split for seed {seed}"),
    })
}

/// [`collapse_construction`] over a run of seeds.
#[derive(Clone, Debug)]
pub struct CollapseSweep {
    pub instances: Vec<CollapseInstance>,
}

impl CollapseSweep {
    pub fn run(seeds: impl IntoIterator<Item = u64>, spread: f64, cfg: &ModulationConfig) -> Result<Self> {
        let instances =
            seeds.into_iter().map(|s| collapse_construction(s, spread, cfg)).collect::<Result<_>>()?;
        Ok(Self { instances })
    }

    /// Disagreement-to-distance ratios of the modulated boundary case.
    pub fn ratios(&self) -> Vec<Option<f64>> {
        self.instances.iter().map(|i| i.boundary_modulated.ratio()).collect()
    }

    /// Coefficient of variation (population) of [`Self::ratios`]; `None`
    /// if any ratio is missing or the mean is not positive.
    pub fn ratio_cv(&self) -> Option<f64> {
        let r: Vec<f64> = self.ratios().into_iter().collect::<Option<_>>()?;
        if r.is_empty() {
            return None;
        }
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        if !(mean > 0.0) {
            return None;
        }
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(var.sqrt() / mean)
    }
}

/// Clustered queries and keys with base angles aligned to their block means.
#[derive(Clone, Debug)]
pub struct ClusteredScenario {
    pub q: Array,
    pub k: Array,
    pub params: MirrorParams,
}

/// Draws `tokens` queries and keys from [`clustered_tokens`] and aligns the
/// base angles with [`aligning_angles`] over their union.
pub fn clustered_scenario(
    seed: u64,
    tokens: usize,
    heads: usize,
    head_dim: usize,
    clusters: usize,
    noise: f64,
    cfg: &ModulationConfig,
) -> Result<ClusteredScenario> {
    let mut rng = Rng::new(seed);
    let width = heads * head_dim;
    let q = clustered_tokens(&mut rng, tokens, width, clusters, noise)?;
    let k = clustered_tokens(&mut rng, tokens, width, clusters, noise)?;
    let base = MirrorParams::random(&mut rng, heads, head_dim)?;
    let angles = aligning_angles(&concat_tokens(&q, &k)?, &base.mirror, heads, cfg)?;
    let params = MirrorParams::new(angles, base.mirror)?;
    Ok(ClusteredScenario { q, k, params })
}

/// Cross-head covariance mass and spectrum change under the global reflection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingStats {
    /// Frobenius norm of all cross-head blocks of the covariance.
    pub offdiag_mass_before: f64,
    pub offdiag_mass_after: f64,
    /// Largest deviation between the sorted eigenvalues.
    pub spectrum_error: f64,
}

/// Unbiased sample covariance of the rows of `x` (`L x F`).
pub fn sample_covariance(x: &Array) -> Result<Array> {
    let [l, f] = x.dims2()?;
    if l < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {l}")));
    }
    let mut mean = vec![0.0; f];
    for i in 0..l {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v / l as f64);
    }
    let mut cov = Array::zeros(&[f, f]);
    for i in 0..l {
        let r: Vec<f64> = x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..f {
            for b in 0..f {
                let o = cov.offset(&[a, b]);
                cov.data_mut()[o] += r[a] * r[b];
            }
        }
    }
    Ok(cov.scale(1.0 / (l - 1) as f64))
}

/// Frobenius norm of the entries of `sigma` that couple two different heads.
pub fn cross_head_mass(sigma: &Array, heads: usize, head_dim: usize) -> Result<f64> {
    let [f, g] = sigma.dims2()?;
    if f != g || f != heads * head_dim {
        return Err(Error::Shape(format!(
            "covariance {f}x{g} does not match {heads} heads x {head_dim}"
        )));
    }
    let mut total = 0.0;
    for a in 0..f {
        for b in 0..f {
            if a / head_dim != b / head_dim {
                total += sigma.get(&[a, b]).powi(2);
            }
        }
    }
    Ok(total.sqrt())
}

fn spectrum_error(before: &Array, after: &Array) -> Result<f64> {
    let a = sym_eigenvalues(before)?;
    let b = sym_eigenvalues(after)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// `H Sigma H` for the Householder matrix `H` of `u`.
pub fn reflected_covariance(sigma: &Array, u: &GlobalMirror) -> Result<Array> {
    let h = householder_matrix(u.as_array().data())?;
    matmul(&matmul(&h, sigma)?, &h)
}

/// Mixing statistics computed directly from a covariance matrix.
pub fn covariance_mixing_from_cov(
    sigma: &Array,
    u: &GlobalMirror,
    heads: usize,
    head_dim: usize,
) -> Result<MixingStats> {
    let after = reflected_covariance(sigma, u)?;
    Ok(MixingStats {
        offdiag_mass_before: cross_head_mass(sigma, heads, head_dim)?,
        offdiag_mass_after: cross_head_mass(&after, heads, head_dim)?,
        spectrum_error: spectrum_error(sigma, &after)?,
    })
}

/// Reflects the samples `x` (`L x H*D`) and compares the sample covariances
/// before and after.
pub fn covariance_mixing(
    x: &Array,
    u: &GlobalMirror,
    heads: usize,
    head_dim: usize,
) -> Result<MixingStats> {
    let before = sample_covariance(x)?;
    let after = sample_covariance(&global_reflect(x, u)?)?;
    Ok(MixingStats {
        offdiag_mass_before: cross_head_mass(&before, heads, head_dim)?,
        offdiag_mass_after: cross_head_mass(&after, heads, head_dim)?,
        spectrum_error: spectrum_error(&before, &after)?,
    })
}

/// Feature map applied before the kernel in [`topology_export`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TopologyMode {
    /// Identity features.
    Vanilla,
    /// `ReLU` only.
    Truncate,
    /// Global and block reflections without the `ReLU`.
    Mirror,
    /// The full reflecting feature map.
    MirrorRelu,
}

impl TopologyMode {
    pub const ALL: [TopologyMode; 4] =
        [TopologyMode::Vanilla, TopologyMode::Truncate, TopologyMode::Mirror, TopologyMode::MirrorRelu];

    pub fn name(&self) -> &'static str {
        match self {
            TopologyMode::Vanilla => "vanilla",
            TopologyMode::Truncate => "truncate",
            TopologyMode::Mirror => "mirror",
            TopologyMode::MirrorRelu => "mirror_relu",
        }
    }
}

impl fmt::Display for TopologyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TopologyMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown topology mode {s:?}")))
    }
}

/// Tolerance below which two normalised kernel rows count as the same.
pub const DISTINCT_ROW_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Topology {
    pub mode: TopologyMode,
    /// `Nq x Nk` kernel of batch 0, summed over heads.
    pub kernel: Array,
    /// Row-wise softmax of `kernel`.
    pub normalized: Array,
    /// `Nq x 2` principal-component coordinates of the normalised rows.
    pub points: Array,
    /// The normalised rows span fewer than two dimensions.
    pub degenerate: bool,
    /// Normalised rows that differ from every earlier row by more than
    /// [`DISTINCT_ROW_TOL`].
    pub distinct_rows: usize,
}

fn mode_features(
    q: &Array,
    k: &Array,
    params: &MirrorParams,
    cfg: &ModulationConfig,
    mode: TopologyMode,
) -> Result<(Array, Array)> {
    let heads = params.heads();
    match mode {
        TopologyMode::Vanilla => Ok((split_heads(q, heads)?, split_heads(k, heads)?)),
        TopologyMode::Truncate => Ok((relu_features(q, heads)?, relu_features(k, heads)?)),
        TopologyMode::Mirror | TopologyMode::MirrorRelu => {
            // one set of statistics so queries and keys share their angles
            let nq = q.shape()[1];
            let nk = k.shape()[1];
            let trace =
                feature_map_traced(&concat_tokens(q, k)?, params, cfg, VarianceSource::Computed)?;
            let feats =
                if mode == TopologyMode::Mirror { trace.pre_activation } else { trace.output };
            Ok((slice_tokens(&feats, 0, nq)?, slice_tokens(&feats, nq, nq + nk)?))
        }
    }
}

fn softmax_rows(kernel: &Array) -> Result<Array> {
    let [_, nk] = kernel.dims2()?;
    let mut out = kernel.clone();
    for row in out.data_mut().chunks_exact_mut(nk) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Counts rows of `m` that differ from every earlier kept row by more than `tol`.
pub fn distinct_rows(m: &Array, tol: f64) -> Result<usize> {
    let [n, _] = m.dims2()?;
    let mut kept: Vec<&[f64]> = Vec::new();
    for i in 0..n {
        let r = m.row(i);
        let new = kept
            .iter()
            .all(|k| k.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > tol);
        if new {
            kept.push(r);
        }
    }
    Ok(kept.len())
}

/// Kernel topology of one batch element under a feature-map `mode`.
///
/// `q` and `k` are `[B, N, H*D]` token rows, both with at least two tokens.
/// The reflecting modes compute block statistics over the union of query and
/// key tokens, so without the `ReLU` the kernel equals the vanilla one.
/// Queries are not rescaled.
pub fn topology_export(
    q: &Array,
    k: &Array,
    params: &MirrorParams,
    cfg: &ModulationConfig,
    mode: TopologyMode,
) -> Result<Topology> {
    let (phi_q, phi_k) = mode_features(q, k, params, cfg, mode)?;
    let [_, h, nq, d] = dims4(&phi_q)?;
    let nk = phi_k.shape()[2];
    if nq < 2 || nk < 2 {
        return Err(Error::InvalidArgument("topology export needs at least 2 tokens".into()));
    }
    let mut kernel = Array::zeros(&[nq, nk]);
    for hi in 0..h {
        for i in 0..nq {
            let a = &phi_q.data()[(hi * nq + i) * d..(hi * nq + i + 1) * d];
            for j in 0..nk {
                let b = &phi_k.data()[(hi * nk + j) * d..(hi * nk + j + 1) * d];
                let o = kernel.offset(&[i, j]);
                kernel.data_mut()[o] += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    let normalized = softmax_rows(&kernel)?;
    let pca = pca_project(&normalized, 2)?;
    Ok(Topology {
        mode,
        distinct_rows: distinct_rows(&normalized, DISTINCT_ROW_TOL)?,
        kernel,
        normalized,
        points: pca.projections,
        degenerate: pca.degenerate,
    })
}

/// Base angles that send the mean of every block of `tokens` (`[B, N, H*D]`,
/// batch 0) to the diagonal of the positive quadrant, after the global
/// reflection and the angle shift the statistics of `tokens` induce.
pub fn aligning_angles(
    tokens: &Array,
    mirror: &GlobalMirror,
    heads: usize,
    cfg: &ModulationConfig,
) -> Result<MirrorAngles> {
    let rows = if cfg.disable_global { tokens.clone() } else { global_reflect(tokens, mirror)? };
    let stats = block_variance(&split_heads(&rows, heads)?)?;
    let m = stats.variance.shape()[2];
    let mut theta = Array::zeros(&[heads, m]);
    for h in 0..heads {
        for b in 0..m {
            let phi = stats.mean.get(&[0, h, b, 1]).atan2(stats.mean.get(&[0, h, b, 0]));
            let shift =
                if cfg.disable_modulation { 0.0 } else { cfg.shift(stats.variance.get(&[0, h, b])) };
            theta.set(&[h, b], (FRAC_PI_4 + phi) / 2.0 - shift);
        }
    }
    MirrorAngles::new(theta)
}

/// Tokens drawn around `clusters` centres whose coordinates are all in
/// `[-1.5, -0.5]`, with isotropic noise of standard deviation `noise`.
/// Returns `[1, n, width]`.
pub fn clustered_tokens(rng: &mut Rng, n: usize, width: usize, clusters: usize, noise: f64) -> Result<Array> {
    if clusters == 0 || n == 0 || width == 0 {
        return Err(Error::InvalidArgument("clustered tokens need n, width, clusters >= 1".into()));
    }
    let centres: Vec<Vec<f64>> =
        (0..clusters).map(|_| (0..width).map(|_| rng.uniform_range(-1.5, -0.5)).collect()).collect();
    let mut data = Vec::with_capacity(n * width);
    for t in 0..n {
        for &c in &centres[t % clusters] {
            data.push(c + noise * rng.normal());
        }
    }
    Array::from_vec(&[1, n, width], data)
}
