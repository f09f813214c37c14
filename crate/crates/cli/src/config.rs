//! Run configuration: defaults, JSON file, then command-line overrides.

use std::path::{Path, PathBuf};

use mirrorla::diversity::{TopologyMode, MAX_SPREAD};
use mirrorla::featmap::ModulationConfig;
use mirrorla::suites::EQUIVALENCE_TOL;
use serde::Deserialize;

/// Directory for outputs when `--out` and `out` are both absent.
pub const OUT_DIR_ENV: &str = "MIRRORLA_OUT_DIR";

/// Every tunable of every command. Unknown JSON keys are rejected.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Must name the subcommand being run, when present.
    pub command: Option<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,

    /// Shape extents. Unset values fall back to per-command defaults.
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub tokens: Option<usize>,

    pub lambda: f64,
    pub eps: f64,
    pub alpha_max: f64,
    pub stop_grad_variance: bool,

    /// `check`.
    pub equivalence_configs: usize,
    pub equivalence_tol: f64,
    pub isometry_triples: usize,
    pub gradcheck_trials: usize,
    pub spectrum_instances: usize,

    /// `bench`.
    pub n_grid: Vec<usize>,
    pub reps: usize,

    /// `topology`.
    pub modes: Vec<String>,
    pub clusters: usize,
    pub cluster_noise: f64,

    /// `diversity`: seeds `seed..seed + seeds`.
    pub seeds: usize,
    pub spread: f64,

    /// `train`: seeds `seed..seed + train_seeds`.
    pub train_seeds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub sequences: usize,
    pub features: usize,
    pub task_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModulationConfig::default();
        let b = mirrorla::bench::BenchConfig::default();
        let t = mirrorla::harness::TrainConfig::default();
        let task = mirrorla::harness::TaskSpec::default();
        Self {
            command: None,
            seed: 0,
            out: None,
            heads: None,
            head_dim: None,
            tokens: None,
            lambda: m.lambda,
            eps: m.eps,
            alpha_max: m.alpha_max,
            stop_grad_variance: m.stop_grad_variance,
            equivalence_configs: 200,
            equivalence_tol: EQUIVALENCE_TOL,
            isometry_triples: 1000,
            gradcheck_trials: 50,
            spectrum_instances: 100,
            n_grid: b.n_grid,
            reps: b.reps,
            modes: TopologyMode::ALL.iter().map(|m| m.name().to_string()).collect(),
            clusters: 3,
            cluster_noise: 0.05,
            seeds: 20,
            spread: MAX_SPREAD,
            train_seeds: 5,
            epochs: t.epochs,
            lr: t.lr,
            sequences: task.sequences,
            features: task.features,
            task_noise: task.noise,
        }
    }
}

/// Values given on the command line; each one replaces the file's.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_grid: Option<Vec<usize>>,
    pub reps: Option<usize>,
}

impl RunConfig {
    /// Defaults, then `path` if given, then `overrides`.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self, String> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| format!("invalid config {}: {e}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = overrides.out {
            cfg.out = Some(o);
        }
        if let Some(g) = overrides.n_grid {
            cfg.n_grid = g;
        }
        if let Some(r) = overrides.reps {
            cfg.reps = r;
        }
        Ok(cfg)
    }

    pub fn modulation(&self) -> ModulationConfig {
        ModulationConfig {
            lambda: self.lambda,
            eps: self.eps,
            alpha_max: self.alpha_max,
            stop_grad_variance: self.stop_grad_variance,
            ..ModulationConfig::default()
        }
    }

    pub fn topology_modes(&self) -> Result<Vec<TopologyMode>, String> {
        self.modes.iter().map(|m| m.parse().map_err(|e| format!("{e}"))).collect()
    }

    /// `out`, else `$MIRRORLA_OUT_DIR/<command>.csv`, else `<command>.csv`.
    pub fn output_path(&self, command: &str) -> PathBuf {
        if let Some(p) = &self.out {
            return p.clone();
        }
        let file = format!("{command}.csv");
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(file),
            _ => PathBuf::from(file),
        }
    }
}
