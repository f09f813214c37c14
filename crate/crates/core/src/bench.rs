//! Wall-time and transient-memory scaling of softmax versus linear attention.
//!
//! Each path is timed single-threaded at every sequence length of a geometric
//! grid: one warm-up call is discarded, then the median of `reps` calls is
//! kept. Peak transient buffer bytes come from [`BufferMeter`], so they are
//! exact and independent of the allocator. Scaling exponents are the
//! least-squares slopes of `ln(time)` against `ln(N)`.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::attention::{
    linear_attention_reordered_metered, softmax_attention_metered, AttentionConfig, BufferMeter,
};
use crate::featmap::{MirrorParams, ModulationConfig};
use crate::suites::{Check, SuiteReport};
use crate::{Error, Result, Rng};

/// Minimum number of grid points for a slope fit.
pub const MIN_GRID_POINTS: usize = 4;
/// Minimum number of timed repetitions per point.
pub const MIN_REPS: usize = 5;
/// A median must span this many timer ticks to be trusted.
pub const MIN_TICKS: f64 = 1000.0;
/// Accepted range of the linear path's scaling exponent.
pub const LINEAR_SLOPE_RANGE: (f64, f64) = (0.8, 1.3);
/// Smallest accepted scaling exponent of the softmax path.
pub const SOFTMAX_MIN_SLOPE: f64 = 1.7;
/// Length at which the memory ratio is compared, when on the grid.
pub const MEMORY_RATIO_N: usize = 8192;
/// Smallest accepted softmax/linear peak-buffer ratio.
pub const MIN_MEMORY_RATIO: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub n_grid: Vec<usize>,
    pub heads: usize,
    pub head_dim: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![512, 1024, 2048, 4096, 8192, 16384],
            heads: 4,
            head_dim: 32,
            reps: MIN_REPS,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.len() < MIN_GRID_POINTS {
            return Err(Error::InvalidArgument(format!(
                "need at least {MIN_GRID_POINTS} sequence lengths, got {}",
                self.n_grid.len()
            )));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_grid[0] < 2 {
            return Err(Error::InvalidArgument(
                "sequence lengths must be increasing and at least 2".into(),
            ));
        }
        if self.reps < MIN_REPS {
            return Err(Error::InvalidArgument(format!(
                "need at least {MIN_REPS} repetitions, got {}",
                self.reps
            )));
        }
        AttentionConfig::new(self.heads, self.head_dim).validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionPath {
    Softmax,
    Linear,
}

impl AttentionPath {
    pub const ALL: [AttentionPath; 2] = [AttentionPath::Softmax, AttentionPath::Linear];

    pub fn name(&self) -> &'static str {
        match self {
            AttentionPath::Softmax => "softmax",
            AttentionPath::Linear => "linear",
        }
    }
}

impl fmt::Display for AttentionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionPath::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attention path {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchPoint {
    pub n: usize,
    pub path: AttentionPath,
    pub median_secs: f64,
    pub peak_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub points: Vec<BenchPoint>,
    pub timer_resolution_secs: f64,
}

impl BenchResult {
    pub fn series(&self, path: AttentionPath) -> Vec<BenchPoint> {
        self.points.iter().copied().filter(|p| p.path == path).collect()
    }

    /// Log-log least-squares slope of median time against `N`.
    pub fn slope(&self, path: AttentionPath) -> Result<f64> {
        let s = self.series(path);
        let xs: Vec<f64> = s.iter().map(|p| p.n as f64).collect();
        let ys: Vec<f64> = s.iter().map(|p| p.median_secs).collect();
        loglog_slope(&xs, &ys)
    }

    pub fn peak_bytes(&self, path: AttentionPath, n: usize) -> Option<usize> {
        self.points.iter().find(|p| p.path == path && p.n == n).map(|p| p.peak_bytes)
    }

    /// Scaling and memory checks. The memory ratio is taken at
    /// [`MEMORY_RATIO_N`], or at the largest length when that is off the grid.
    pub fn report(&self) -> SuiteReport {
        let slope = |p| self.slope(p).unwrap_or(f64::NAN);
        let n = if self.points.iter().any(|p| p.n == MEMORY_RATIO_N) {
            MEMORY_RATIO_N
        } else {
            self.points.iter().map(|p| p.n).max().unwrap_or(0)
        };
        let (lo, hi) = LINEAR_SLOPE_RANGE;
        SuiteReport {
            suite: "bench",
            cases: self.points.len(),
            checks: vec![
                Check::within("linear_slope", slope(AttentionPath::Linear), lo, hi),
                Check::at_least("softmax_slope", slope(AttentionPath::Softmax), SOFTMAX_MIN_SLOPE),
                Check::at_least(
                    format!("memory_ratio@{n}"),
                    self.memory_ratio(n).unwrap_or(f64::NAN),
                    MIN_MEMORY_RATIO,
                ),
            ],
        }
    }

    /// Softmax peak bytes over linear peak bytes at length `n`.
    pub fn memory_ratio(&self, n: usize) -> Option<f64> {
        let s = self.peak_bytes(AttentionPath::Softmax, n)?;
        let l = self.peak_bytes(AttentionPath::Linear, n)?;
        (l > 0).then(|| s as f64 / l as f64)
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < MIN_GRID_POINTS {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs at least {MIN_GRID_POINTS} paired points"
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("slope fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

/// Smallest observed nonzero step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn measure(reps: usize, mut call: impl FnMut() -> Result<usize>) -> Result<(f64, usize)> {
    let peak = call()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        black_box(call()?);
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok((median(times), peak))
}

/// Runs the benchmark. `progress` is called after every measured point.
pub fn run_bench(cfg: &BenchConfig, mut progress: impl FnMut(&BenchPoint)) -> Result<BenchResult> {
    cfg.validate()?;
    let resolution = timer_resolution().as_secs_f64();
    let acfg = AttentionConfig::new(cfg.heads, cfg.head_dim);
    let mcfg = ModulationConfig::default();
    let mut rng = Rng::new(cfg.seed);
    let params = MirrorParams::random(&mut rng, cfg.heads, cfg.head_dim)?;
    let width = cfg.heads * cfg.head_dim;
    let mut points = Vec::with_capacity(2 * cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let q = rng.normal_array(&[1, n, width]);
        let k = rng.normal_array(&[1, n, width]);
        let v = rng.normal_array(&[1, cfg.heads, n, cfg.head_dim]);
        // the linear path goes first so it never runs right after the release
        // of a multi-gigabyte weight matrix
        for path in [AttentionPath::Linear, AttentionPath::Softmax] {
            let (median_secs, peak_bytes) = measure(cfg.reps, || {
                let mut meter = BufferMeter::new();
                let out = match path {
                    AttentionPath::Softmax => softmax_attention_metered(&q, &k, &v, &acfg, &mut meter)?,
                    AttentionPath::Linear => linear_attention_reordered_metered(
                        &q, &k, &v, &params, &mcfg, &acfg, &mut meter,
                    )?,
                };
                black_box(out);
                Ok(meter.peak_bytes())
            })?;
            if median_secs < MIN_TICKS * resolution {
                return Err(Error::InvalidArgument(format!(
                    "{path} at N={n} took {median_secs:.3e}s, under {MIN_TICKS} timer ticks of \
                     {resolution:.1e}s; use a larger grid"
                )));
            }
            let p = BenchPoint { n, path, median_secs, peak_bytes };
            progress(&p);
            points.push(p);
        }
    }
    Ok(BenchResult { points, timer_resolution_secs: resolution })
}
