//! Verification suites comparing the closed-form optima against independent
//! numerical oracles. Instance `i` of every check draws from
//! `Rng::new(seed).fork(i)`, so any failure can be replayed in isolation.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use guidefree::closedform::{
    brute_force_contrastive, brute_force_simplex, ccdpo_optimum, mclr_optimum, mclr_optimum_limit,
    mle_mclr_population_objective, verify_weighted_guidance, ContrastiveKind,
};
use guidefree::numerics::Rng;
use guidefree::objectives::regularizer::{marginal_form, paired_form, symmetric_form};
use guidefree::worlds::{DiscreteProblem, GaussianMixture1d};
use serde::Serialize;

/// Floor used for every clipped optimum.
pub const FLOOR: f64 = 1e-9;
pub const BRUTE_ITERATIONS: usize = 5000;
pub const NEWTON_ITERATIONS: usize = 200;
pub const GUIDANCE_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    ClippedOptimum,
    PreferenceOptimum,
    WeightedGuidance,
    Equivalence,
    Recovery,
    All,
}

impl Suite {
    pub const EACH: [Suite; 5] = [
        Suite::ClippedOptimum,
        Suite::PreferenceOptimum,
        Suite::WeightedGuidance,
        Suite::Equivalence,
        Suite::Recovery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::ClippedOptimum => "theorem1",
            Suite::PreferenceOptimum => "theorem2",
            Suite::WeightedGuidance => "theorem3",
            Suite::Equivalence => "equivalence",
            Suite::Recovery => "corollaries",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            _ => Suite::EACH
                .into_iter()
                .find(|v| v.name() == s)
                .ok_or_else(|| anyhow::anyhow!("unknown suite `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub instance: usize,
    pub detail: String,
    /// `null` when the instance errored.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    /// What `worst_gap` measures.
    pub measure: String,
    pub passed: bool,
    pub worst_gap: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance_override: Option<f64>,
    pub passed: bool,
    pub replay: String,
    pub suites: Vec<SuiteReport>,
}

/// Collects per-instance gaps; an instance passes when `gap < tolerance`.
struct Check {
    name: &'static str,
    measure: &'static str,
    tolerance: f64,
    instances: usize,
    worst: f64,
    failures: Vec<Failure>,
}

impl Check {
    fn new(name: &'static str, measure: &'static str, default_tol: f64, overridden: Option<f64>) -> Self {
        Self {
            name,
            measure,
            tolerance: overridden.unwrap_or(default_tol),
            instances: 0,
            worst: 0.0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, instance: usize, detail: impl FnOnce() -> String, gap: guidefree::Result<f64>) {
        self.instances = self.instances.max(instance + 1);
        match gap {
            Ok(g) => {
                self.worst = self.worst.max(g);
                if !(g < self.tolerance) {
                    self.failures.push(Failure {
                        instance,
                        detail: detail(),
                        gap: g,
                    });
                }
            }
            Err(e) => {
                self.worst = f64::INFINITY;
                self.failures.push(Failure {
                    instance,
                    detail: format!("{}: {e}", detail()),
                    gap: f64::NAN,
                });
            }
        }
    }

    fn finish(self) -> CheckReport {
        CheckReport {
            name: self.name.into(),
            measure: self.measure.into(),
            passed: self.failures.is_empty() && self.instances > 0,
            worst_gap: self.worst,
            tolerance: self.tolerance,
            instances: self.instances,
            failures: self.failures,
        }
    }
}

fn instance_rng(seed: u64, i: usize) -> Rng {
    Rng::new(seed).fork(i as u64)
}

/// Support size in 3..=8 and 2 or 3 classes.
fn random_problem(rng: &mut Rng) -> guidefree::Result<DiscreteProblem> {
    let s = 3 + rng.below(6);
    let m = 2 + rng.below(2);
    DiscreteProblem::random(s, m, rng)
}

fn pick(rng: &mut Rng, options: &[f64]) -> f64 {
    options[rng.below(options.len())]
}

/// Clipped closed form against projected-gradient search on the exact
/// population objective, 100 problems.
pub fn mclr_oracle_check(seed: u64, tol: Option<f64>) -> CheckReport {
    let mut chk = Check::new("mclr_closed_form_vs_brute_force", "total_variation", 1e-5, tol);
    for i in 0..100 {
        let mut rng = instance_rng(seed, i);
        let eta = pick(&mut rng, &[0.5, 1.0, 2.0]);
        let gap = random_problem(&mut rng).and_then(|p| {
            let mut worst = 0.0f64;
            for c in 0..p.num_classes() {
                let (q, _) = mclr_optimum(&p, c, eta, FLOOR, None)?;
                let obj = mle_mclr_population_objective(&p, c, eta)?;
                let b = brute_force_simplex(&obj, p.support(), FLOOR, BRUTE_ITERATIONS, &mut rng)?;
                worst = worst.max(q.total_variation(b.dist.probs()));
            }
            Ok(worst)
        });
        chk.record(i, || format!("eta={eta}"), gap);
    }
    chk.finish()
}

/// The three-point example at eta = 1: `(5/6, 1/6, 0)` for the first class,
/// both in the floorless limit and with the default floor.
pub fn canonical_example_check(tol: Option<f64>) -> CheckReport {
    let mut chk = Check::new("three_point_example", "total_variation", 1e-5, tol);
    let p = DiscreteProblem::three_point_example();
    let want = [5.0 / 6.0, 1.0 / 6.0, 0.0];
    chk.record(0, || "floorless limit".into(), mclr_optimum_limit(&p, 0, 1.0, None).map(|q| q.total_variation(&want)));
    chk.record(
        1,
        || format!("floor {FLOOR}"),
        mclr_optimum(&p, 0, 1.0, FLOOR, None).map(|(q, _)| q.total_variation(&want)),
    );
    chk.finish()
}

/// Fine-tuning a mixture-leaked base with the matching strength recovers
/// the true conditional, 20 problems per strength.
pub fn mixture_recovery_check(seed: u64, tol: Option<f64>) -> CheckReport {
    let mut chk = Check::new("mixture_reference_recovery", "total_variation", 1e-9, tol);
    let mut instance = 0;
    for eta in [0.1, 0.3, 0.7] {
        for _ in 0..20 {
            let mut rng = instance_rng(seed, instance);
            let gap = random_problem(&mut rng).and_then(|p| {
                let reference = p.mixture_ref(eta)?;
                let mut worst = 0.0f64;
                for c in 0..p.num_classes() {
                    let (q, _) = mclr_optimum(&p, c, eta, FLOOR, Some(&reference[c]))?;
                    worst = worst.max(q.total_variation(&p.cond()[c]));
                }
                Ok(worst)
            });
            chk.record(instance, || format!("eta={eta}"), gap);
            instance += 1;
        }
    }
    chk.finish()
}

/// The preference optimum applied to a gamma-powered base recovers the true
/// conditional, 100 problems.
pub fn gamma_recovery_check(seed: u64, tol: Option<f64>) -> CheckReport {
    let mut chk = Check::new("gamma_reference_recovery", "total_variation", 1e-9, tol);
    for i in 0..100 {
        let mut rng = instance_rng(seed, i);
        let beta = pick(&mut rng, &[0.5, 1.0, 2.0]);
        let gap = random_problem(&mut rng).and_then(|p| {
            let reference = p.gamma_ref(beta)?;
            let mut worst = 0.0f64;
            for c in 0..p.num_classes() {
                let q = ccdpo_optimum(&p, &reference[c], c, beta)?;
                worst = worst.max(q.total_variation(&p.cond()[c]));
            }
            Ok(worst)
        });
        chk.record(i, || format!("beta={beta}"), gap);
    }
    chk.finish()
}

/// A random problem, a strength and one random reference column per class.
fn preference_instance(seed: u64, i: usize) -> guidefree::Result<(DiscreteProblem, f64, Vec<Vec<f64>>)> {
    let mut rng = instance_rng(seed, i);
    let beta = pick(&mut rng, &[0.5, 1.0, 2.0]);
    let p = random_problem(&mut rng)?;
    let reference = (0..p.num_classes()).map(|_| rng.flat_dirichlet(p.support())).collect();
    Ok((p, beta, reference))
}

fn contrastive_check(seed: u64, tol: Option<f64>, name: &'static str, cca: bool) -> CheckReport {
    let mut chk = Check::new(name, "total_variation", 1e-5, tol);
    for i in 0..100 {
        let mut beta = f64::NAN;
        let gap = preference_instance(seed, i).and_then(|(p, b, reference)| {
            beta = b;
            let kind = if cca {
                ContrastiveKind::Cca { beta, lambda: None }
            } else {
                ContrastiveKind::Ccdpo { beta }
            };
            let mut worst = 0.0f64;
            for c in 0..p.num_classes() {
                let closed = ccdpo_optimum(&p, &reference[c], c, beta)?;
                let brute = brute_force_contrastive(&p, &reference[c], c, kind, NEWTON_ITERATIONS)?;
                worst = worst.max(closed.total_variation(brute.dist.probs()));
            }
            Ok(worst)
        });
        chk.record(i, || format!("beta={beta}"), gap);
    }
    chk.finish()
}

/// Gamma-powered closed form against Newton on the preference objective.
pub fn ccdpo_oracle_check(seed: u64, tol: Option<f64>) -> CheckReport {
    contrastive_check(seed, tol, "ccdpo_closed_form_vs_brute_force", false)
}

/// Gamma-powered closed form against Newton on the noise-contrastive
/// objective with its normalizing lambda.
pub fn cca_oracle_check(seed: u64, tol: Option<f64>) -> CheckReport {
    contrastive_check(seed, tol, "cca_brute_force_vs_ccdpo_closed_form", true)
}

/// The symmetric, paired and marginal regularizer forms agree under exact
/// enumeration, 20 problems with random model tables.
pub fn regularizer_forms_check(seed: u64, tol: Option<f64>) -> CheckReport {
    let mut chk = Check::new("regularizer_forms_agree", "absolute_difference", 1e-12, tol);
    for i in 0..20 {
        let mut rng = instance_rng(seed, i);
        let gap = random_problem(&mut rng).and_then(|p| {
            let q: Vec<Vec<f64>> = (0..p.num_classes()).map(|_| rng.flat_dirichlet(p.support())).collect();
            let a = symmetric_form(&p, &q)?;
            let b = paired_form(&p, &q)?;
            let c = marginal_form(&p, &q)?;
            Ok((a - b).abs().max((a - c).abs()).max((b - c).abs()))
        });
        chk.record(i, String::new, gap);
    }
    chk.finish()
}

/// Monte-Carlo minimizer of the sample-adaptively weighted objective against
/// the analytic guided score on a 1D two-class world: 21 grid points for
/// each strength and noise level. The gap is the worst deviation in
/// Monte-Carlo standard errors. Noise level `k` uses seed `seed + k`.
pub fn weighted_guidance_check(seed: u64, tol: Option<f64>) -> CheckReport {
    let mut chk = Check::new("mc_minimizer_vs_guided_score", "standard_errors", 3.0, tol);
    let world = GaussianMixture1d::two_class_default();
    let grid: Vec<f64> = (0..21).map(|i| -3.0 + 0.3 * i as f64).collect();
    let mut instance = 0;
    for (k, sigma) in [0.1, 0.5, 2.0].into_iter().enumerate() {
        for eta in [0.5, 1.0, 2.0] {
            let r = verify_weighted_guidance(&world, 0, eta, sigma, &grid, GUIDANCE_MC_SAMPLES, seed.wrapping_add(k as u64));
            chk.record(instance, || format!("sigma={sigma} eta={eta}"), r.map(|r| r.max_z()));
            instance += 1;
        }
    }
    chk.finish()
}

pub fn run_suite(suite: Suite, seed: u64, tol: Option<f64>) -> Vec<SuiteReport> {
    let one = |s: Suite, checks: Vec<CheckReport>| SuiteReport {
        suite: s.name().into(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    match suite {
        Suite::ClippedOptimum => vec![one(suite, vec![mclr_oracle_check(seed, tol), canonical_example_check(tol)])],
        Suite::PreferenceOptimum => vec![one(suite, vec![ccdpo_oracle_check(seed, tol)])],
        Suite::WeightedGuidance => vec![one(suite, vec![weighted_guidance_check(seed, tol)])],
        Suite::Equivalence => vec![one(
            suite,
            vec![cca_oracle_check(seed, tol), regularizer_forms_check(seed, tol)],
        )],
        Suite::Recovery => vec![one(
            suite,
            vec![mixture_recovery_check(seed, tol), gamma_recovery_check(seed, tol)],
        )],
        Suite::All => Suite::EACH.into_iter().flat_map(|s| run_suite(s, seed, tol)).collect(),
    }
}

pub fn verify(suite: Suite, seed: u64, tol: Option<f64>) -> Result<VerifyReport> {
    if let Some(t) = tol {
        if !(t >= 0.0) {
            bail!("tolerance override must be non-negative, got {t}");
        }
    }
    let suites = run_suite(suite, seed, tol);
    Ok(VerifyReport {
        seed,
        tolerance_override: tol,
        passed: suites.iter().all(|s| s.passed),
        replay: format!("instance i of each check draws from Rng::new({seed}).fork(i)"),
        suites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::EACH.into_iter().chain([Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("theorem4".parse::<Suite>().is_err());
    }

    #[test]
    fn zero_tolerance_fails_with_gaps() {
        let r = verify(Suite::ClippedOptimum, 0, Some(0.0)).unwrap();
        assert!(!r.passed);
        let c = &r.suites[0].checks[0];
        assert_eq!(c.failures.len(), c.instances);
        assert!(c.failures.iter().all(|f| f.gap >= 0.0));
    }

    #[test]
    fn fixed_seed_gives_identical_bytes() {
        let a = serde_json::to_string(&verify(Suite::Recovery, 3, None).unwrap()).unwrap();
        let b = serde_json::to_string(&verify(Suite::Recovery, 3, None).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_tolerance_is_rejected() {
        assert!(verify(Suite::PreferenceOptimum, 0, Some(-1.0)).is_err());
    }
}
