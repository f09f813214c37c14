//! Randomised verification suites with explicit tolerances.
//!
//! Each suite draws its cases from a seeded generator and reports the worst
//! observed deviation per check, so a run is reproducible and a failure names
//! the property that broke.

use std::f64::consts::PI;
use std::fmt;

use crate::attention::{linear_attention_direct, linear_attention_reordered, AttentionConfig};
use crate::diversity::{
    covariance_mixing, covariance_mixing_from_cov, reflected_covariance, topology_export,
    ClusteredScenario, CollapseSweep, Topology, TopologyMode,
};
use crate::featmap::{MirrorParams, ModulationConfig};
use crate::gradcheck::GradcheckReport;
use crate::numerics::{dot, Array};
use crate::reflect::{global_reflect, householder_2d, householder_matrix, reflect_blocks, GlobalMirror};
use crate::{Result, Rng};

/// Default bound on `|direct - reordered|_inf`.
pub const EQUIVALENCE_TOL: f64 = 1e-10;
/// Default bound on inner-product deviation under a reflection.
pub const INNER_PRODUCT_TOL: f64 = 1e-10;
/// Default bound on `|R(R x) - x|_inf` and on closed-form disagreement.
pub const INVOLUTION_TOL: f64 = 1e-12;
/// Default bound on the sorted-eigenvalue deviation.
pub const SPECTRUM_TOL: f64 = 1e-8;
/// Largest `H * D` drawn by [`spectrum_suite`].
pub const MAX_SPECTRUM_WIDTH: usize = 64;

/// Worst deviation of one property over a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `worst <= tolerance` (NaN fails).
    pub fn at_most(name: impl Into<String>, worst: f64, tolerance: f64) -> Self {
        Self { name: name.into(), worst, tolerance, passed: worst <= tolerance }
    }

    /// Passes when `worst < bound` (NaN fails).
    pub fn below(name: impl Into<String>, worst: f64, bound: f64) -> Self {
        Self { name: name.into(), worst, tolerance: bound, passed: worst < bound }
    }

    /// Passes when `value > bound`; `worst` holds the value.
    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), worst: value, tolerance: bound, passed: value > bound }
    }

    /// Passes when `value >= bound`; `worst` holds the value.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), worst: value, tolerance: bound, passed: value >= bound }
    }

    /// Passes when `value` lies in `[lo, hi]`; `worst` holds the value and
    /// `tolerance` the upper end.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), worst: value, tolerance: hi, passed: value >= lo && value <= hi }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub cases: usize,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Re-expresses a gradient check as a suite report, one check per group.
    pub fn from_gradcheck(r: &GradcheckReport) -> Self {
        let mode = if r.stop_grad_variance { "stop_grad" } else { "through_variance" };
        let checks = r
            .worst
            .iter()
            .map(|&(g, e)| Check {
                name: format!("{g}/{mode}"),
                worst: e,
                tolerance: r.tolerance,
                passed: e < r.tolerance,
            })
            .collect();
        Self { suite: "gradcheck", cases: r.trials, checks }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {} ({} cases)", self.suite, self.cases)?;
        for c in &self.checks {
            let mark = if c.passed { "ok" } else { "FAILED" };
            write!(f, "\n  {:<28} value {:.3e} limit {:.3e} {mark}", c.name, c.worst, c.tolerance)?;
        }
        Ok(())
    }
}

/// Direct versus reordered linear attention over `configs` random shapes
/// (`B <= 2`, `H <= 4`, `N <= 64`, `D, Dv <= 16`), including both query
/// scalings and both statistics modes.
pub fn equivalence_suite(seed: u64, configs: usize, tol: f64) -> Result<SuiteReport> {
    let mut rng = Rng::new(seed);
    let (mut out_err, mut denom_err) = (0.0f64, 0.0f64);
    for _ in 0..configs {
        let b = rng.int_range(1, 2);
        let h = rng.int_range(1, 4);
        let (nq, nk) = (rng.int_range(1, 64), rng.int_range(1, 64));
        let d = 2 * rng.int_range(1, 8);
        let dv = rng.int_range(1, 16);
        let mut acfg = AttentionConfig::new(h, d);
        acfg.scale_qk = rng.bool();
        acfg.shared_stats = rng.bool();
        let mcfg = ModulationConfig::default();
        let q = rng.normal_array(&[b, nq, h * d]);
        let k = rng.normal_array(&[b, nk, h * d]);
        let v = rng.normal_array(&[b, h, nk, dv]);
        let p = MirrorParams::random(&mut rng, h, d)?;
        let direct = linear_attention_direct(&q, &k, &v, &p, &mcfg, &acfg)?;
        let reordered = linear_attention_reordered(&q, &k, &v, &p, &mcfg, &acfg)?;
        out_err = out_err.max(direct.out.max_abs_diff(&reordered.out));
        denom_err = denom_err.max(direct.denom.max_abs_diff(&reordered.denom));
    }
    Ok(SuiteReport {
        suite: "equivalence",
        cases: configs,
        checks: vec![
            Check::at_most("output", out_err, tol),
            Check::at_most("normaliser", denom_err, tol),
        ],
    })
}

/// Inner products, involution and the 2D closed form over `triples` random
/// `(q, k, angles)` draws, each also pushed through a random global mirror.
pub fn isometry_suite(seed: u64, triples: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(seed);
    let (mut ip, mut inv, mut closed) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..triples {
        let d = 2 * rng.int_range(1, 32);
        let q = rng.normal_array(&[1, 1, 1, d]);
        let k = rng.normal_array(&[1, 1, 1, d]);
        let angles = rng.uniform_array(&[1, d / 2], -PI, PI);
        let u = GlobalMirror::new(rng.normal_array(&[d]))?;
        let base = dot(q.data(), k.data());

        let (rq, rk) = (reflect_blocks(&q, &angles)?, reflect_blocks(&k, &angles)?);
        let (gq, gk) = (global_reflect(&q, &u)?, global_reflect(&k, &u)?);
        ip = ip.max((dot(rq.data(), rk.data()) - base).abs());
        ip = ip.max((dot(gq.data(), gk.data()) - base).abs());
        inv = inv.max(reflect_blocks(&rq, &angles)?.max_abs_diff(&q));
        inv = inv.max(global_reflect(&gq, &u)?.max_abs_diff(&q));

        for &t in angles.data() {
            let general = householder_matrix(&[-t.sin(), t.cos()])?;
            closed = closed.max(householder_2d(t).max_abs_diff(&general));
        }
    }
    Ok(SuiteReport {
        suite: "isometry",
        cases: triples,
        checks: vec![
            Check::at_most("inner_product", ip, INNER_PRODUCT_TOL),
            Check::at_most("involution", inv, INVOLUTION_TOL),
            Check::at_most("closed_form_2d", closed, INVOLUTION_TOL),
        ],
    })
}

/// Deviation of the two-head example from its hand-derived values: with
/// `Sigma = diag(1, 2, 3, 4)` and `u = (1, 1, 1, 1)` the reflected
/// cross-head block is `[[0.5, 0], [0, -0.5]]` and its mass is exactly 1.
pub fn two_head_example_error() -> Result<f64> {
    let mut sigma = Array::zeros(&[4, 4]);
    for i in 0..4 {
        sigma.set(&[i, i], (i + 1) as f64);
    }
    let u = GlobalMirror::new(Array::from_vec(&[4], vec![1.0; 4])?)?;
    let after = reflected_covariance(&sigma, &u)?;
    let expect = [[0.5, 0.0], [0.0, -0.5]];
    let mut err = 0.0f64;
    for (a, row) in expect.iter().enumerate() {
        for (b, &e) in row.iter().enumerate() {
            err = err.max((after.get(&[a, 2 + b]) - e).abs());
            err = err.max((after.get(&[2 + b, a]) - e).abs());
        }
    }
    let stats = covariance_mixing_from_cov(&sigma, &u, 2, 2)?;
    err = err.max(stats.offdiag_mass_before.abs());
    Ok(err.max((stats.offdiag_mass_after - 1.0).abs()))
}

/// Sorted-eigenvalue deviation of sample covariances before and after a
/// random global reflection, over `instances` draws with `H * D <= 64`,
/// plus the exact two-head example.
pub fn spectrum_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let h = rng.int_range(1, 4);
        let d = 2 * rng.int_range(1, MAX_SPECTRUM_WIDTH / (2 * h));
        let samples = h * d + rng.int_range(1, 16);
        let x = rng.normal_array(&[samples, h * d]);
        let u = GlobalMirror::new(rng.normal_array(&[h * d]))?;
        worst = worst.max(covariance_mixing(&x, &u, h, d)?.spectrum_error);
    }
    Ok(SuiteReport {
        suite: "spectrum",
        cases: instances,
        checks: vec![
            Check::at_most("eigenvalues", worst, SPECTRUM_TOL),
            Check::at_most("two_head_example", two_head_example_error()?, 0.0),
        ],
    })
}

/// Largest acceptable coefficient of variation of the collapse ratios.
pub const MAX_RATIO_CV: f64 = 1.0;
/// Largest kernel deviation between the reflect-only and vanilla modes.
pub const TOPOLOGY_ISOMETRY_TOL: f64 = 1e-10;

/// Pass/fail summary of a [`CollapseSweep`].
pub fn collapse_report(sweep: &CollapseSweep, cfg: &ModulationConfig) -> SuiteReport {
    let count = |f: &dyn Fn(&crate::diversity::CollapseInstance) -> bool| {
        sweep.instances.iter().filter(|i| !f(i)).count() as f64
    };
    let ratios: Option<Vec<f64>> = sweep.ratios().into_iter().collect();
    let min_ratio = ratios.map_or(f64::NAN, |r| r.into_iter().fold(f64::INFINITY, f64::min));
    SuiteReport {
        suite: "collapse",
        cases: sweep.instances.len(),
        checks: vec![
            Check::at_most("deep_not_collapsed", count(&|i| i.collapses_without_modulation()), 0.0),
            Check::at_most("boundary_not_split", count(&|i| i.splits_with_modulation()), 0.0),
            Check::at_most("shift_not_saturated", count(&|i| i.saturated(cfg)), 0.0),
            Check::above("min_ratio", min_ratio, 0.0),
            Check::below("ratio_cv", sweep.ratio_cv().unwrap_or(f64::NAN), MAX_RATIO_CV),
        ],
    }
}

/// Exports every mode in `modes` and checks that reflecting alone keeps the
/// vanilla kernel and that truncation merges rows the full map keeps apart.
/// Checks whose modes were not requested are skipped.
pub fn topology_suite(
    scenario: &ClusteredScenario,
    cfg: &ModulationConfig,
    modes: &[TopologyMode],
) -> Result<(Vec<Topology>, SuiteReport)> {
    let topos = modes
        .iter()
        .map(|&m| topology_export(&scenario.q, &scenario.k, &scenario.params, cfg, m))
        .collect::<Result<Vec<_>>>()?;
    let find = |m: TopologyMode| topos.iter().find(|t| t.mode == m);
    let mut checks = Vec::new();
    if let (Some(v), Some(m)) = (find(TopologyMode::Vanilla), find(TopologyMode::Mirror)) {
        checks.push(Check::at_most(
            "mirror_vs_vanilla_kernel",
            v.kernel.max_abs_diff(&m.kernel),
            TOPOLOGY_ISOMETRY_TOL,
        ));
    }
    if let (Some(t), Some(m)) = (find(TopologyMode::Truncate), find(TopologyMode::MirrorRelu)) {
        checks.push(Check::below(
            "truncate_distinct_rows",
            t.distinct_rows as f64,
            m.distinct_rows as f64,
        ));
    }
    let cases = scenario.q.shape()[1];
    Ok((topos, SuiteReport { suite: "topology", cases, checks }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(equivalence_suite(1, 10, EQUIVALENCE_TOL).unwrap().passed());
        assert!(isometry_suite(2, 20).unwrap().passed());
        assert!(spectrum_suite(3, 10).unwrap().passed());
    }

    #[test]
    fn impossible_tolerance_fails() {
        let r = equivalence_suite(1, 10, 0.0).unwrap();
        assert!(!r.passed());
        assert!(r.to_string().starts_with("FAIL equivalence"));
    }

    #[test]
    fn two_head_example_is_exact() {
        assert_eq!(two_head_example_error().unwrap(), 0.0);
    }

    #[test]
    fn collapse_and_topology_reports() {
        let cfg = ModulationConfig::default();
        let sweep = CollapseSweep::run(0..3, crate::diversity::MAX_SPREAD, &cfg).unwrap();
        let r = collapse_report(&sweep, &cfg);
        assert_eq!(r.checks.len(), 5);
        assert!(r.passed(), "{r}");

        let sc = crate::diversity::clustered_scenario(12, 12, 2, 4, 3, 0.05, &cfg).unwrap();
        let (topos, r) = topology_suite(&sc, &cfg, &TopologyMode::ALL).unwrap();
        assert_eq!(topos.len(), 4);
        assert_eq!(r.checks.len(), 2);
        assert!(r.passed(), "{r}");
        let (_, r) = topology_suite(&sc, &cfg, &[TopologyMode::Vanilla]).unwrap();
        assert!(r.checks.is_empty());
    }

    #[test]
    fn nan_never_passes() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
    }
}
