use crate::error::{invalid, Error, Result};
use crate::worlds::DiscreteProblem;

use super::SimplexDist;

pub const MAX_BISECTIONS: usize = 200;
const LAMBDA_LO: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-12;

/// Outcome of the scalar normalizer search.
#[derive(Debug, Clone, PartialEq)]
pub struct BisectionReport {
    /// Normalizer `lambda*` with `A(lambda*) = m(c)`.
    pub lambda: f64,
    pub iterations: usize,
    /// `|A(lambda*) - m(c)|`.
    pub residual: f64,
    /// Target mass `m(c) = 1 - delta * #{h <= 0}`.
    pub target: f64,
    /// Every `(lambda, A(lambda))` evaluated, bracket endpoints first.
    pub trace: Vec<(f64, f64)>,
}

/// `h(x|c) = base(x|c) + eta (p(x|c) - p(x))`, where `base` is `p(.|c)` or
/// a reference column.
pub fn mclr_target(problem: &DiscreteProblem, c: usize, eta: f64, reference: Option<&[f64]>) -> Result<Vec<f64>> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(invalid(format!("eta = {eta} must be non-negative")));
    }
    let col = problem.cond_column(c)?;
    let base = reference.unwrap_or(col);
    if base.len() != col.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![col.len()],
            actual: vec![base.len()],
        });
    }
    Ok(base
        .iter()
        .zip(col)
        .zip(problem.marginal())
        .map(|((b, p), m)| b + eta * (p - m))
        .collect())
}

/// `A(lambda)`: mass of `max{h / lambda, delta}` over the atoms with `h > 0`.
pub fn clipped_mass(h: &[f64], lambda: f64, delta: f64) -> f64 {
    h.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| if v <= lambda * delta { delta } else { v / lambda })
        .sum()
}

/// Floored optimum `max{h / lambda*, delta}` of the likelihood-ratio
/// regularized objective for class `c`. With `reference`, `h` is built from
/// the reference column instead of `p(.|c)` (the fine-tuning variant).
pub fn mclr_optimum(
    problem: &DiscreteProblem,
    c: usize,
    eta: f64,
    delta: f64,
    reference: Option<&[f64]>,
) -> Result<(SimplexDist, BisectionReport)> {
    let s = problem.support();
    if !(delta > 0.0) || delta * s as f64 >= 1.0 {
        return Err(invalid(format!("floor delta = {delta} must lie in (0, 1/{s})")));
    }
    let h = mclr_target(problem, c, eta, reference)?;
    let h_max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(h_max > 0.0) {
        return Err(Error::NotNormalizable("h(x|c) <= 0 everywhere".into()));
    }
    let negative = h.iter().filter(|&&v| v <= 0.0).count();
    let target = 1.0 - delta * negative as f64;

    let mut lo = LAMBDA_LO;
    let mut hi = h_max / delta;
    let mut trace = vec![(lo, clipped_mass(&h, lo, delta)), (hi, clipped_mass(&h, hi, delta))];
    if !(trace[0].1 >= target && trace[1].1 <= target) {
        return Err(Error::NoConvergence(format!(
            "normalizer not bracketed: A({lo}) = {}, A({hi}) = {}, target {target}",
            trace[0].1, trace[1].1
        )));
    }
    let mut lambda = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_BISECTIONS {
        iterations += 1;
        lambda = 0.5 * (lo + hi);
        let a = clipped_mass(&h, lambda, delta);
        trace.push((lambda, a));
        residual = (a - target).abs();
        if residual <= RESIDUAL_TOL || hi - lo <= f64::EPSILON * lambda {
            break;
        }
        if a > target {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    // Polish: on the active set found by bisection, A is affine in
    // 1/lambda, so the root is explicit.
    let clipped = h.iter().filter(|&&v| v > 0.0 && v <= lambda * delta).count();
    let free: f64 = h.iter().filter(|&&v| v > lambda * delta).sum();
    let exact = free / (target - delta * clipped as f64);
    if exact.is_finite() && exact > 0.0 {
        let a = clipped_mass(&h, exact, delta);
        if (a - target).abs() < residual {
            lambda = exact;
            residual = (a - target).abs();
        }
    }
    if residual > RESIDUAL_TOL {
        return Err(Error::NoConvergence(format!(
            "bisection residual {residual:e} after {iterations} iterations"
        )));
    }
    let q: Vec<f64> = h.iter().map(|&v| (v / lambda).max(delta)).collect();
    let dist = SimplexDist::new(q)?;
    Ok((
        dist,
        BisectionReport {
            lambda,
            iterations,
            residual,
            target,
            trace,
        },
    ))
}

/// The floorless limit: the positive part of `h`, renormalized.
pub fn mclr_optimum_limit(problem: &DiscreteProblem, c: usize, eta: f64, reference: Option<&[f64]>) -> Result<SimplexDist> {
    let h = mclr_target(problem, c, eta, reference)?;
    SimplexDist::normalize(h.into_iter().map(|v| v.max(0.0)).collect())
        .map_err(|_| Error::NotNormalizable("h(x|c) <= 0 everywhere".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn zero_eta_returns_the_conditional() {
        let mut rng = Rng::new(11);
        for _ in 0..10 {
            let p = DiscreteProblem::random(6, 3, &mut rng).unwrap();
            for c in 0..3 {
                let (q, _) = mclr_optimum(&p, c, 0.0, 1e-9, None).unwrap();
                assert!(q.total_variation(p.cond_column(c).unwrap()) < 1e-9);
            }
        }
    }

    #[test]
    fn three_point_example() {
        let p = DiscreteProblem::three_point_example();
        let want = [5.0 / 6.0, 1.0 / 6.0, 0.0];
        let lim = mclr_optimum_limit(&p, 0, 1.0, None).unwrap();
        assert!(lim.total_variation(&want) < 1e-15);
        let (q, rep) = mclr_optimum(&p, 0, 1.0, 1e-12, None).unwrap();
        assert!(q.total_variation(&want) < 1e-10);
        // h = (1.0, 0.2, -0.2): one negative atom, target 1 - delta
        assert!((rep.target - (1.0 - 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_floor() {
        let p = DiscreteProblem::three_point_example();
        assert!(mclr_optimum(&p, 0, 1.0, 1.0 / 3.0, None).is_err());
        assert!(mclr_optimum(&p, 0, 1.0, 0.0, None).is_err());
        assert!(mclr_optimum(&p, 0, -1.0, 1e-9, None).is_err());
    }

    #[test]
    fn floor_structure_and_bracket() {
        let mut rng = Rng::new(12);
        for _ in 0..50 {
            let s = 3 + rng.below(6);
            let p = DiscreteProblem::random(s, 2 + rng.below(2), &mut rng).unwrap();
            let eta = [0.5, 1.0, 2.0][rng.below(3)];
            let delta = 1e-3;
            let (q, rep) = mclr_optimum(&p, 0, eta, delta, None).unwrap();
            let h = mclr_target(&p, 0, eta, None).unwrap();
            for (qi, hi) in q.probs().iter().zip(&h) {
                assert!(*qi >= delta);
                assert!(*qi == delta || (qi - hi / rep.lambda).abs() < 1e-12);
            }
            assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(rep.residual <= 1e-12);
            assert!(rep.trace[0].1 >= rep.target && rep.trace[1].1 <= rep.target);
            let mut t = rep.trace.clone();
            t.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(t.windows(2).all(|w| w[1].1 <= w[0].1));
        }
    }

    #[test]
    fn limit_matches_tiny_floor() {
        let mut rng = Rng::new(13);
        for _ in 0..30 {
            let p = DiscreteProblem::random(5, 2, &mut rng).unwrap();
            let lim = mclr_optimum_limit(&p, 1, 1.5, None).unwrap();
            let (q, _) = mclr_optimum(&p, 1, 1.5, 1e-12, None).unwrap();
            assert!(q.total_variation(lim.probs()) < 1e-9);
        }
    }

    #[test]
    fn mixture_reference_is_undone() {
        let mut rng = Rng::new(14);
        for &eta in &[0.1, 0.3, 0.7] {
            let p = DiscreteProblem::random(7, 3, &mut rng).unwrap();
            let r = p.mixture_ref(eta).unwrap();
            for c in 0..3 {
                let (q, _) = mclr_optimum(&p, c, eta, 1e-12, Some(&r[c])).unwrap();
                assert!(q.total_variation(p.cond_column(c).unwrap()) < 1e-9);
            }
        }
    }
}
