//! The five subcommands. Each writes one CSV file and a summary on stderr.

use std::fmt::Display;
use std::path::Path;

use mirrorla::bench::{run_bench, BenchConfig};
use mirrorla::diversity::{clustered_scenario, CollapseSweep};
use mirrorla::gradcheck::{gradcheck_suite, GradcheckOptions};
use mirrorla::harness::{compare_models, ModelKind, TaskSpec, TrainConfig, MIN_ACCURACY_GAP};
use mirrorla::suites::{
    collapse_report, equivalence_suite, isometry_suite, spectrum_suite, topology_suite, Check,
    SuiteReport,
};
use mirrorla::Error;

use crate::config::RunConfig;

/// Why a command did not succeed.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or I/O; nothing was verified.
    Setup(String),
    /// The command ran and a verification failed.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Setup(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::OddDimension(_) | Error::Shape(_) => {
                CliError::Setup(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

type CmdResult = Result<(), CliError>;

fn setup_err(e: impl Display) -> CliError {
    CliError::Setup(e.to_string())
}

fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(setup_err)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(setup_err)?;
    w.write_record(header).map_err(setup_err)?;
    for r in rows {
        w.write_record(r.as_ref()).map_err(setup_err)?;
    }
    w.flush().map_err(setup_err)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Shortest round-trip form, in scientific notation outside `[1e-4, 1e15)`.
fn num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&v.abs()) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn check_rows(reports: &[SuiteReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .flat_map(|r| {
            r.checks.iter().map(move |c: &Check| {
                vec![
                    r.suite.to_string(),
                    c.name.clone(),
                    r.cases.to_string(),
                    num(c.worst),
                    num(c.tolerance),
                    c.passed.to_string(),
                ]
            })
        })
        .collect()
}

const CHECK_HEADER: [&str; 6] = ["suite", "check", "cases", "value", "limit", "passed"];

/// Fails with the names of every suite that did not pass.
fn verdict(reports: &[SuiteReport]) -> CmdResult {
    let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.suite).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failing suites: {}", failing.join(", "))))
    }
}

pub fn check(cfg: &RunConfig, out: &Path) -> CmdResult {
    let mut reports = vec![equivalence_suite(cfg.seed, cfg.equivalence_configs, cfg.equivalence_tol)?];
    eprintln!("{}", reports[0]);
    reports.push(isometry_suite(cfg.seed, cfg.isometry_triples)?);
    eprintln!("{}", reports[1]);
    for stop_grad in [true, false] {
        let opts = GradcheckOptions { stop_grad_variance: stop_grad, ..Default::default() };
        let r = SuiteReport::from_gradcheck(&gradcheck_suite(cfg.seed, cfg.gradcheck_trials, &opts)?);
        eprintln!("{r}");
        reports.push(r);
    }
    reports.push(spectrum_suite(cfg.seed, cfg.spectrum_instances)?);
    eprintln!("{}", reports[4]);
    write_csv(out, &CHECK_HEADER, &check_rows(&reports))?;
    verdict(&reports)
}

pub fn bench(cfg: &RunConfig, out: &Path) -> CmdResult {
    let defaults = BenchConfig::default();
    let bcfg = BenchConfig {
        n_grid: cfg.n_grid.clone(),
        heads: cfg.heads.unwrap_or(defaults.heads),
        head_dim: cfg.head_dim.unwrap_or(defaults.head_dim),
        reps: cfg.reps,
        seed: cfg.seed,
    };
    bcfg.validate()?;
    let result = run_bench(&bcfg, |p| {
        eprintln!("  N={:<6} {:<8} median {:.4}s peak {} B", p.n, p.path, p.median_secs, p.peak_bytes)
    })?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for p in &result.points {
        let (n, path) = (p.n.to_string(), p.path.to_string());
        rows.push(vec!["median_secs".into(), n.clone(), path.clone(), num(p.median_secs)]);
        rows.push(vec!["peak_bytes".into(), n, path, p.peak_bytes.to_string()]);
    }
    let report = result.report();
    for c in &report.checks {
        rows.push(vec![c.name.clone(), String::new(), String::new(), num(c.worst)]);
    }
    eprintln!("{report}");
    write_csv(out, &["record", "n", "path", "value"], &rows)?;
    verdict(&[report])
}

pub fn topology(cfg: &RunConfig, out: &Path) -> CmdResult {
    let modes = cfg.topology_modes().map_err(CliError::Setup)?;
    let mcfg = cfg.modulation();
    mcfg.validate()?;
    let scenario = clustered_scenario(
        cfg.seed,
        cfg.tokens.unwrap_or(24),
        cfg.heads.unwrap_or(2),
        cfg.head_dim.unwrap_or(4),
        cfg.clusters,
        cfg.cluster_noise,
        &mcfg,
    )?;
    let (topos, report) = topology_suite(&scenario, &mcfg, &modes)?;
    let mut rows: Vec<[String; 4]> = Vec::new();
    for t in &topos {
        eprintln!(
            "  {:<12} distinct rows {:>3}{}",
            t.mode,
            t.distinct_rows,
            if t.degenerate { " (degenerate)" } else { "" }
        );
        for i in 0..t.points.shape()[0] {
            let p = t.points.row(i);
            rows.push([i.to_string(), num(p[0]), num(p[1]), t.mode.to_string()]);
        }
    }
    eprintln!("{report}");
    write_csv(out, &["point_id", "pc1", "pc2", "mode"], &rows)?;
    verdict(&[report])
}

pub fn diversity(cfg: &RunConfig, out: &Path) -> CmdResult {
    let mcfg = cfg.modulation();
    let seeds = cfg.seed..cfg.seed + cfg.seeds as u64;
    let sweep = CollapseSweep::run(seeds, cfg.spread, &mcfg)?;
    let mut rows: Vec<[String; 6]> = Vec::new();
    for inst in &sweep.instances {
        let verdict = inst.verdict().to_string();
        for (setting, s) in inst.settings() {
            rows.push([
                inst.seed.to_string(),
                setting.to_string(),
                num(s.mean_hamming),
                s.distinct_patterns.to_string(),
                s.pairwise_dist_mean.map(num).unwrap_or_default(),
                verdict.clone(),
            ]);
        }
    }
    let report = collapse_report(&sweep, &mcfg);
    eprintln!("{report}");
    write_csv(out, &["seed", "setting", "mean_hamming", "distinct", "dist_mean", "verdict"], &rows)?;
    verdict(&[report])
}

pub fn train(cfg: &RunConfig, out: &Path) -> CmdResult {
    let spec = TaskSpec {
        sequences: cfg.sequences,
        tokens: cfg.tokens.unwrap_or(TaskSpec::default().tokens),
        features: cfg.features,
        noise: cfg.task_noise,
    };
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        heads: cfg.heads.unwrap_or(TrainConfig::default().heads),
        modulation: cfg.modulation(),
        ..Default::default()
    };
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + cfg.train_seeds as u64).collect();
    let cmp = compare_models(&seeds, &ModelKind::ALL, &spec, &tcfg)?;
    let mut rows: Vec<[String; 5]> = Vec::new();
    for run in &cmp.runs {
        let (model, seed) = (run.kind.to_string(), run.seed.to_string());
        for r in &run.outcome.state.history {
            rows.push([model.clone(), seed.clone(), r.step.to_string(), num(r.loss), num(r.acc)]);
        }
        rows.push([model, seed, "test".into(), String::new(), num(run.outcome.test_accuracy)]);
        eprintln!("  {:<8} seed {:<3} test accuracy {:.1}%", run.kind, run.seed, run.outcome.test_accuracy);
    }
    for kind in ModelKind::ALL {
        let med = cmp.median_accuracy(kind).unwrap_or(f64::NAN);
        rows.push([kind.to_string(), "median".into(), "test".into(), String::new(), num(med)]);
    }
    let gap = cmp.gap().unwrap_or(f64::NAN);
    rows.push(["gap".into(), "median".into(), "test".into(), String::new(), num(gap)]);
    let report = SuiteReport {
        suite: "train",
        cases: cmp.runs.len(),
        checks: vec![Check::at_least("accuracy_gap", gap, MIN_ACCURACY_GAP)],
    };
    eprintln!("{report}");
    write_csv(out, &["model", "seed", "step", "loss", "acc"], &rows)?;
    verdict(&[report])
}
