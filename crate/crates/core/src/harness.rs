//! Toy trainability experiment and the parameter file format.
//!
//! The task: every sequence repeats (with noise) the mean token of its class.
//! Both class means lie in the negative orthant and differ only by negative
//! offsets, so a plain `ReLU` feature map sees almost nothing. The model is a
//! single linear-attention layer with `q = k = v = x` mapped to features,
//! mean-pooled over tokens and heads' channels, followed by a two-way linear
//! head and cross-entropy. Training is full-batch gradient descent with a
//! fixed step.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{linear_reordered_from_features, relu_features, BufferMeter};
use crate::featmap::{feature_map_traced, FeatureMapTrace, MirrorParams, ModulationConfig, VarianceSource};
use crate::gradcheck::{attention_backward, feature_map_backward};
use crate::numerics::Array;
use crate::reflect::{dims3, GlobalMirror, MirrorAngles};
use crate::{Error, Result, Rng};

/// Balanced two-class sequence data.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTask {
    pub seed: u64,
    pub noise: f64,
    /// `[2, F]` class means; every coordinate is negative and
    /// `means[1] - means[0] < 0` coordinatewise.
    pub means: Array,
    /// `[S, N, F]`.
    pub sequences: Array,
    /// Class of each sequence, alternating `0, 1, 0, 1, ...`.
    pub labels: Vec<usize>,
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ (stream + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Builds a task of `s` sequences of `n` tokens with `f` features.
///
/// Class-0 mean coordinates are drawn from `[-1.0, -0.5]`; class 1 subtracts
/// offsets drawn from `[0.2, 0.5]`. Tokens are the class mean plus isotropic
/// Gaussian noise of standard deviation `noise`.
pub fn make_task(seed: u64, s: usize, n: usize, f: usize, noise: f64) -> Result<ToyTask> {
    if s == 0 || !s.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("sequence count must be even and positive, got {s}")));
    }
    if f == 0 || !f.is_multiple_of(2) {
        return Err(Error::OddDimension(f));
    }
    if n == 0 || !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("need n >= 1 and noise >= 0, got {n}, {noise}")));
    }
    let mut rng = Rng::new(seed);
    let m0: Vec<f64> = (0..f).map(|_| rng.uniform_range(-1.0, -0.5)).collect();
    let m1: Vec<f64> = m0.iter().map(|m| m - rng.uniform_range(0.2, 0.5)).collect();
    let means = Array::from_vec(&[2, f], [m0, m1].concat())?;
    let task = ToyTask { seed, noise, means, sequences: Array::zeros(&[1, 1, f]), labels: Vec::new() };
    Ok(task.resample(0, s, n))
}

impl ToyTask {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.means.shape()[1]
    }

    /// Fresh sequences from the same class means; `stream` 0 is the training
    /// split and any other stream is disjoint from it.
    pub fn resample(&self, stream: u64, s: usize, n: usize) -> ToyTask {
        let f = self.features();
        let mut rng = Rng::new(stream_seed(self.seed, stream));
        let labels: Vec<usize> = (0..s).map(|i| i % 2).collect();
        let mut data = Vec::with_capacity(s * n * f);
        for &c in &labels {
            for _ in 0..n {
                for &m in self.means.row(c) {
                    data.push(m + self.noise * rng.normal());
                }
            }
        }
        ToyTask {
            sequences: Array::from_vec(&[s, n, f], data).expect("sizes agree"),
            labels,
            ..self.clone()
        }
    }

    /// A held-out split of the same size.
    pub fn held_out(&self) -> ToyTask {
        let s = self.sequences.shape();
        self.resample(1, s[0], s[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Reflecting feature map with trainable angles and mirror.
    Mirror,
    /// Plain `ReLU` features.
    ReluLa,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Mirror, ModelKind::ReluLa];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mirror => "mirror",
            ModelKind::ReluLa => "relu_la",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirror" => Ok(ModelKind::Mirror),
            "relu_la" => Ok(ModelKind::ReluLa),
            _ => Err(Error::InvalidArgument(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Seeds the parameter initialisation.
    pub seed: u64,
    pub heads: usize,
    pub modulation: ModulationConfig,
    pub denom_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.5,
            seed: 0,
            heads: 2,
            modulation: ModulationConfig::default(),
            denom_eps: 1e-6,
        }
    }
}

/// Two-way linear classifier on pooled features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    /// `[2, F]`.
    pub weight: Array,
    pub bias: [f64; 2],
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    /// Training-split accuracy in percent.
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub kind: ModelKind,
    /// Feature-map parameters; unused by [`ModelKind::ReluLa`].
    pub params: MirrorParams,
    pub head: LinearHead,
    /// Gradient steps taken.
    pub step: usize,
    /// Loss and accuracy before every step and after the last one.
    pub history: Vec<LogRow>,
}

impl TrainState {
    pub fn init(kind: ModelKind, features: usize, cfg: &TrainConfig) -> Result<Self> {
        if cfg.heads == 0 || !features.is_multiple_of(2 * cfg.heads) {
            return Err(Error::Shape(format!(
                "{features} features do not split into {} heads of even width",
                cfg.heads
            )));
        }
        let mut rng = Rng::new(cfg.seed);
        let params = MirrorParams::random(&mut rng, cfg.heads, features / cfg.heads)?;
        let weight = rng.normal_array(&[2, features]).scale(0.1);
        Ok(Self { kind, params, head: LinearHead { weight, bias: [0.0; 2] }, step: 0, history: Vec::new() })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

struct Forward {
    trace: Option<FeatureMapTrace>,
    phi: Array,
    attn: crate::attention::AttentionOutput,
    pooled: Array,
    logits: Array,
}

fn forward(x: &Array, state: &TrainState, cfg: &TrainConfig) -> Result<Forward> {
    let heads = state.params.heads();
    let (trace, phi) = match state.kind {
        ModelKind::Mirror => {
            let t = feature_map_traced(x, &state.params, &cfg.modulation, VarianceSource::Computed)?;
            let phi = t.output.clone();
            (Some(t), phi)
        }
        ModelKind::ReluLa => (None, relu_features(x, heads)?),
    };
    let attn = linear_reordered_from_features(&phi, &phi, &phi, cfg.denom_eps, &mut BufferMeter::new())?;
    let s = attn.out.shape();
    let (b, h, n, d) = (s[0], s[1], s[2], s[3]);
    let f = h * d;
    let mut pooled = Array::zeros(&[b, f]);
    for bi in 0..b {
        for hi in 0..h {
            for t in 0..n {
                let row = &attn.out.data()[((bi * h + hi) * n + t) * d..][..d];
                for (j, v) in row.iter().enumerate() {
                    pooled.data_mut()[bi * f + hi * d + j] += v / n as f64;
                }
            }
        }
    }
    let mut logits = Array::zeros(&[b, 2]);
    for bi in 0..b {
        for c in 0..2 {
            let z: f64 = state.head.weight.row(c).iter().zip(pooled.row(bi)).map(|(w, p)| w * p).sum();
            logits.set(&[bi, c], z + state.head.bias[c]);
        }
    }
    Ok(Forward { trace, phi, attn, pooled, logits })
}

/// Mean cross-entropy, accuracy in percent, and `d loss / d logits`.
fn cross_entropy(logits: &Array, labels: &[usize]) -> (f64, f64, Array) {
    let s = labels.len();
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = Array::zeros(&[s, 2]);
    for (i, &y) in labels.iter().enumerate() {
        let (a, b) = (logits.get(&[i, 0]), logits.get(&[i, 1]));
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        loss += lse - logits.get(&[i, y]);
        let pred = if b > a { 1 } else { 0 };
        correct += usize::from(pred == y);
        for c in 0..2 {
            let p = (logits.get(&[i, c]) - lse).exp();
            grad.set(&[i, c], (p - f64::from(u8::from(c == y))) / s as f64);
        }
    }
    (loss / s as f64, 100.0 * correct as f64 / s as f64, grad)
}

/// Loss and accuracy (percent) of `state` on `task`.
pub fn evaluate(task: &ToyTask, state: &TrainState, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let fwd = forward(&task.sequences, state, cfg)?;
    let (loss, acc, _) = cross_entropy(&fwd.logits, &task.labels);
    Ok((loss, acc))
}

/// One forward/backward pass; returns the log row and applies a step of
/// size `lr` to every trainable parameter.
fn step(task: &ToyTask, state: &mut TrainState, cfg: &TrainConfig) -> Result<LogRow> {
    let fwd = forward(&task.sequences, state, cfg)?;
    let (loss, acc, g_logits) = cross_entropy(&fwd.logits, &task.labels);
    let row = LogRow { step: state.step, loss, acc };
    if !loss.is_finite() {
        return Err(Error::Diverged { step: state.step, loss });
    }
    let [s, _] = fwd.pooled.dims2()?;
    let f = fwd.pooled.shape()[1];

    let mut g_w = Array::zeros(&[2, f]);
    let mut g_b = [0.0; 2];
    let mut g_pool = Array::zeros(&[s, f]);
    for i in 0..s {
        for c in 0..2 {
            let g = g_logits.get(&[i, c]);
            g_b[c] += g;
            for j in 0..f {
                let o = g_w.offset(&[c, j]);
                g_w.data_mut()[o] += g * fwd.pooled.get(&[i, j]);
                let o = g_pool.offset(&[i, j]);
                g_pool.data_mut()[o] += g * state.head.weight.get(&[c, j]);
            }
        }
    }

    if let Some(trace) = &fwd.trace {
        let shape = fwd.attn.out.shape().to_vec();
        let (h, n, d) = (shape[1], shape[2], shape[3]);
        let mut g_out = Array::zeros(&shape);
        for (idx, g) in g_out.data_mut().iter_mut().enumerate() {
            let j = idx % d;
            let hi = idx / (n * d) % h;
            let bi = idx / (h * n * d);
            *g = g_pool.get(&[bi, hi * d + j]) / n as f64;
        }
        let ga = attention_backward(&fwd.phi, &fwd.phi, &fwd.phi, &fwd.attn, &g_out)?;
        let mut g_phi = ga.d_phi_q;
        for ((g, a), b) in g_phi.data_mut().iter_mut().zip(ga.d_phi_k.data()).zip(ga.d_v.data()) {
            *g += a + b;
        }
        let gm = feature_map_backward(trace, &g_phi, &state.params, &cfg.modulation, false)?;
        let mut theta = state.params.angles.as_array().clone();
        theta.data_mut().iter_mut().zip(gm.d_theta.data()).for_each(|(t, g)| *t -= cfg.lr * g);
        let mut u = state.params.mirror.as_array().clone();
        u.data_mut().iter_mut().zip(gm.d_uc.data()).for_each(|(t, g)| *t -= cfg.lr * g);
        state.params = MirrorParams::new(MirrorAngles::new(theta)?, GlobalMirror::new(u)?)?;
    }
    state.head.weight.data_mut().iter_mut().zip(g_w.data()).for_each(|(w, g)| *w -= cfg.lr * g);
    state.head.bias.iter_mut().zip(g_b).for_each(|(b, g)| *b -= cfg.lr * g);
    if !state.head.weight.all_finite() || !state.params.angles.as_array().all_finite() {
        return Err(Error::Diverged { step: state.step, loss });
    }
    state.step += 1;
    Ok(row)
}

/// Result of [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Held-out accuracy in percent.
    pub test_accuracy: f64,
}

/// Trains a fresh model of `kind` on `task` and scores it on the held-out split.
pub fn train(task: &ToyTask, kind: ModelKind, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {}", cfg.lr)));
    }
    dims3(&task.sequences)?;
    let mut state = TrainState::init(kind, task.features(), cfg)?;
    for _ in 0..cfg.epochs {
        let row = step(task, &mut state, cfg)?;
        state.history.push(row);
    }
    let (loss, acc) = evaluate(task, &state, cfg)?;
    state.history.push(LogRow { step: state.step, loss, acc });
    let (_, test_accuracy) = evaluate(&task.held_out(), &state, cfg)?;
    Ok(TrainOutcome { state, test_accuracy })
}

/// Smallest accepted median accuracy gap, in points, of mirror over the
/// baseline.
pub const MIN_ACCURACY_GAP: f64 = 5.0;

/// Shape and noise of the synthetic task used by [`compare_models`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpec {
    pub sequences: usize,
    pub tokens: usize,
    pub features: usize,
    pub noise: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self { sequences: 64, tokens: 8, features: 8, noise: 0.1 }
    }
}

/// One trained run of a [`Comparison`].
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub kind: ModelKind,
    pub seed: u64,
    pub outcome: TrainOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub runs: Vec<Run>,
}

impl Comparison {
    /// Median held-out accuracy (percent) of one model kind.
    pub fn median_accuracy(&self, kind: ModelKind) -> Option<f64> {
        let mut accs: Vec<f64> =
            self.runs.iter().filter(|r| r.kind == kind).map(|r| r.outcome.test_accuracy).collect();
        if accs.is_empty() {
            return None;
        }
        accs.sort_by(f64::total_cmp);
        let m = accs.len() / 2;
        Some(if accs.len() % 2 == 1 { accs[m] } else { (accs[m - 1] + accs[m]) / 2.0 })
    }

    /// Median mirror accuracy minus median baseline accuracy, in points.
    pub fn gap(&self) -> Option<f64> {
        Some(self.median_accuracy(ModelKind::Mirror)? - self.median_accuracy(ModelKind::ReluLa)?)
    }
}

/// Trains every kind in `kinds` on the task of every seed. The seed drives
/// both the task and the initialisation.
pub fn compare_models(
    seeds: &[u64],
    kinds: &[ModelKind],
    spec: &TaskSpec,
    cfg: &TrainConfig,
) -> Result<Comparison> {
    let mut runs = Vec::with_capacity(seeds.len() * kinds.len());
    for &seed in seeds {
        let task = make_task(seed, spec.sequences, spec.tokens, spec.features, spec.noise)?;
        let run_cfg = TrainConfig { seed, ..*cfg };
        for &kind in kinds {
            runs.push(Run { kind, seed, outcome: train(&task, kind, &run_cfg)? });
        }
    }
    Ok(Comparison { runs })
}

/// Errors reading a parameter file.
#[derive(Debug, thiserror::Error)]
pub enum ParamFileError {
    #[error("bad magic {found:?}, expected {:?}", MAGIC)]
    BadMagic { found: [u8; 4] },
    #[error("unsupported parameter file version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("parameter file truncated: need {needed} bytes, have {found}")]
    Truncated { needed: usize, found: usize },
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(usize),
    #[error("invalid parameters: {0}")]
    Invalid(#[from] Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const MAGIC: [u8; 4] = *b"MRLA";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

/// Layout, all integers and reals little-endian:
///
/// | bytes | content |
/// |---|---|
/// | 4 | magic `MRLA` |
/// | 4 | `u32` format version (1) |
/// | 12 | `u32` heads `H`, blocks per head `M`, mirror width `H*2M` |
/// | `8*H*M` | base angles, row-major `f64` |
/// | `8*H*2M` | mirror vector `f64` |
pub fn encode_params(p: &MirrorParams) -> Vec<u8> {
    let (h, m) = (p.angles.heads(), p.angles.blocks());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (h * m + p.mirror.dim()));
    out.extend_from_slice(&MAGIC);
    for v in [FORMAT_VERSION, h as u32, m as u32, p.mirror.dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in p.angles.as_array().data().iter().chain(p.mirror.as_array().data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<MirrorParams, ParamFileError> {
    if bytes.len() < 8 {
        return Err(ParamFileError::Truncated { needed: HEADER_LEN, found: bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(ParamFileError::BadMagic { found });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != FORMAT_VERSION {
        return Err(ParamFileError::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ParamFileError::Truncated { needed: HEADER_LEN, found: bytes.len() });
    }
    let (h, m, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let needed = HEADER_LEN + 8 * (h * m + w);
    if bytes.len() < needed {
        return Err(ParamFileError::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(ParamFileError::TrailingBytes(bytes.len() - needed));
    }
    let reals: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let angles = MirrorAngles::new(Array::from_vec(&[h, m], reals[..h * m].to_vec())?)?;
    let mirror = GlobalMirror::new(Array::from_vec(&[w], reals[h * m..].to_vec())?)?;
    Ok(MirrorParams::new(angles, mirror)?)
}

pub fn save_params(path: impl AsRef<Path>, p: &MirrorParams) -> std::result::Result<(), ParamFileError> {
    fs::write(path, encode_params(p))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> std::result::Result<MirrorParams, ParamFileError> {
    decode_params(&fs::read(path)?)
}
