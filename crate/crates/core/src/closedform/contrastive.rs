use crate::error::{invalid, Error, Result};
use crate::objectives::losses::{sigmoid, softplus};
use crate::worlds::DiscreteProblem;

use super::SimplexDist;

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid(format!("beta = {beta} must be positive")));
    }
    Ok(())
}

fn check_reference(problem: &DiscreteProblem, reference: &[f64]) -> Result<()> {
    if reference.len() != problem.support() {
        return Err(Error::ShapeMismatch {
            expected: vec![problem.support()],
            actual: vec![reference.len()],
        });
    }
    if reference.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(invalid("reference column has negative or non-finite entries"));
    }
    Ok(())
}

/// `ref(x|c) (p(x|c) / p(x))^(1/beta)`, renormalized; atoms with
/// `p(x|c) = 0` get zero mass.
pub fn ccdpo_optimum(problem: &DiscreteProblem, reference: &[f64], c: usize, beta: f64) -> Result<SimplexDist> {
    check_beta(beta)?;
    check_reference(problem, reference)?;
    let col = problem.cond_column(c)?;
    let raw: Vec<f64> = col
        .iter()
        .zip(problem.marginal())
        .zip(reference)
        .map(|((&p, &m), &r)| if p == 0.0 { 0.0 } else { r * (p / m).powf(1.0 / beta) })
        .collect();
    SimplexDist::normalize(raw).map_err(|_| Error::NotNormalizable(format!("gamma-powered column {c}")))
}

/// `log(p(x|c) / p(x))` with the additive constant set to zero. `-inf`
/// where `p(x|c) = 0 < p(x)`; NaN where both vanish (the atom lies outside
/// every class).
pub fn dpo_optimal_reward(problem: &DiscreteProblem, c: usize) -> Result<Vec<f64>> {
    let col = problem.cond_column(c)?;
    Ok(col
        .iter()
        .zip(problem.marginal())
        .map(|(&p, &m)| {
            debug_assert!(!(p > 0.0 && m == 0.0), "positive priors give p(x) >= p(c) p(x|c)");
            if p == 0.0 && m == 0.0 {
                f64::NAN
            } else {
                (p / m).ln()
            }
        })
        .collect())
}

/// `lambda` such that the weighted noise-contrastive optimum is already
/// normalized: `lambda^(1/beta) = sum_x ref(x|c) (p(x|c)/p(x))^(1/beta)`.
pub fn cca_normalizing_lambda(problem: &DiscreteProblem, reference: &[f64], c: usize, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_reference(problem, reference)?;
    let col = problem.cond_column(c)?;
    let z: f64 = col
        .iter()
        .zip(problem.marginal())
        .zip(reference)
        .map(|((&p, &m), &r)| if p == 0.0 { 0.0 } else { r * (p / m).powf(1.0 / beta) })
        .sum();
    if !(z > 0.0) {
        return Err(Error::NotNormalizable(format!("class {c}")));
    }
    Ok(z.powf(beta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContrastiveKind {
    /// Preference objective with class-matched winners and losers drawn
    /// from the marginal.
    Ccdpo { beta: f64 },
    /// Weighted noise-contrastive objective; `lambda = None` uses
    /// [`cca_normalizing_lambda`].
    Cca { beta: f64, lambda: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveReport {
    pub dist: SimplexDist,
    /// Mass of the optimized table before renormalization. Meaningful for
    /// the noise-contrastive objective, whose optimum is not
    /// shift-invariant; the preference objective only fixes ratios.
    pub raw_mass: f64,
    pub newton_steps: usize,
    pub lambda: Option<f64>,
}

fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// Maximizes the exact population objective of `kind` for class `c` over a
/// free table `q(x|c) = ref(x|c) exp(u_x)`, by damped Newton on `u`.
///
/// Winners are drawn from `p(x|c)`, losers from `p(x)` (the opposing class
/// is drawn from the priors, independently of `c`). Atoms with
/// `p(x|c) = 0` have their supremum at `u = -inf` and are given zero mass.
pub fn brute_force_contrastive(
    problem: &DiscreteProblem,
    reference: &[f64],
    c: usize,
    kind: ContrastiveKind,
    iterations: usize,
) -> Result<ContrastiveReport> {
    check_reference(problem, reference)?;
    let col = problem.cond_column(c)?;
    let active: Vec<usize> = (0..problem.support()).filter(|&x| col[x] > 0.0).collect();
    let win: Vec<f64> = active.iter().map(|&x| col[x]).collect();
    let lose: Vec<f64> = active.iter().map(|&x| problem.marginal()[x]).collect();
    // Loser mass on atoms outside the active set only adds constants to the
    // preference objective's value: those atoms sit at u = -inf, where
    // log sigmoid(beta (u_a - u_b)) = 0.
    let n = active.len();

    let (u, steps, lambda) = match kind {
        ContrastiveKind::Ccdpo { beta } => {
            check_beta(beta)?;
            let eval = |u: &[f64], grad: &mut [f64], hess: &mut [f64]| -> f64 {
                grad.iter_mut().for_each(|g| *g = 0.0);
                hess.iter_mut().for_each(|h| *h = 0.0);
                let mut f = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        let w = win[a] * lose[b];
                        let z = beta * (u[a] - u[b]);
                        f += w * log_sigmoid(z);
                        let g = w * beta * sigmoid(-z);
                        grad[a] += g;
                        grad[b] -= g;
                        let k = w * beta * beta * sigmoid(z) * sigmoid(-z);
                        hess[a * n + a] -= k;
                        hess[b * n + b] -= k;
                        hess[a * n + b] += k;
                        hess[b * n + a] += k;
                    }
                }
                f
            };
            let (u, steps) = newton_maximize(n, Some(0), iterations, eval)?;
            (u, steps, None)
        }
        ContrastiveKind::Cca { beta, lambda } => {
            check_beta(beta)?;
            let lambda = match lambda {
                Some(l) if l > 0.0 && l.is_finite() => l,
                Some(l) => return Err(invalid(format!("lambda = {l} must be positive"))),
                None => cca_normalizing_lambda(problem, reference, c, beta)?,
            };
            let eval = |u: &[f64], grad: &mut [f64], hess: &mut [f64]| -> f64 {
                hess.iter_mut().for_each(|h| *h = 0.0);
                let mut f = 0.0;
                for x in 0..n {
                    let z = beta * u[x];
                    f += win[x] * log_sigmoid(z) + lambda * lose[x] * log_sigmoid(-z);
                    grad[x] = beta * (win[x] * sigmoid(-z) - lambda * lose[x] * sigmoid(z));
                    hess[x * n + x] = -beta * beta * sigmoid(z) * sigmoid(-z) * (win[x] + lambda * lose[x]);
                }
                f
            };
            let (u, steps) = newton_maximize(n, None, iterations, eval)?;
            (u, steps, Some(lambda))
        }
    };
    let mut raw = vec![0.0; problem.support()];
    for (k, &x) in active.iter().enumerate() {
        raw[x] = reference[x] * u[k].exp();
    }
    let raw_mass: f64 = raw.iter().sum();
    Ok(ContrastiveReport {
        dist: SimplexDist::normalize(raw)?,
        raw_mass,
        newton_steps: steps,
        lambda,
    })
}

/// Damped Newton ascent for a concave function. `pinned` holds one
/// coordinate at zero (for objectives invariant to a common shift).
fn newton_maximize<F>(n: usize, pinned: Option<usize>, iterations: usize, mut eval: F) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(&[f64], &mut [f64], &mut [f64]) -> f64,
{
    let mut u = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut g2 = vec![0.0; n];
    let mut h2 = vec![0.0; n * n];
    let free: Vec<usize> = (0..n).filter(|&i| Some(i) != pinned).collect();
    if free.is_empty() {
        return Ok((u, 0));
    }
    let mut f = eval(&u, &mut grad, &mut hess);
    for step in 0..iterations {
        let m = free.len();
        let mut a = vec![0.0; m * m];
        let mut b = vec![0.0; m];
        for (i, &fi) in free.iter().enumerate() {
            b[i] = grad[fi];
            for (j, &fj) in free.iter().enumerate() {
                a[i * m + j] = -hess[fi * n + fj];
            }
        }
        let gmax = b.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if gmax <= 1e-15 {
            return Ok((u, step));
        }
        let dir = solve_dense(a, b.clone(), m)
            .ok_or_else(|| Error::NoConvergence("singular Hessian in contrastive oracle".into()))?;
        let decrement: f64 = dir.iter().zip(&b).map(|(d, g)| d * g).sum();
        if decrement <= 1e-12 * (1.0 + f.abs()) {
            // The predicted gain is below the resolution of f, so a line
            // search cannot tell steps apart. Take pure Newton steps while
            // the gradient keeps shrinking.
            let mut cand = u.clone();
            for (i, &fi) in free.iter().enumerate() {
                cand[fi] += dir[i];
            }
            let fc = eval(&cand, &mut g2, &mut h2);
            let gnew = free.iter().fold(0.0f64, |acc, &i| acc.max(g2[i].abs()));
            if !(gnew < gmax) {
                return Ok((u, step));
            }
            u = cand;
            f = fc;
            std::mem::swap(&mut grad, &mut g2);
            std::mem::swap(&mut hess, &mut h2);
            continue;
        }
        let mut t = 1.0;
        loop {
            let mut cand = u.clone();
            for (i, &fi) in free.iter().enumerate() {
                cand[fi] += t * dir[i];
            }
            let fc = eval(&cand, &mut g2, &mut h2);
            if fc >= f + 0.25 * t * decrement {
                u = cand;
                f = fc;
                std::mem::swap(&mut grad, &mut g2);
                std::mem::swap(&mut hess, &mut h2);
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::NoConvergence(format!("line search stalled with gradient {gmax:e}")));
            }
        }
    }
    Err(Error::NoConvergence(format!("Newton did not converge in {iterations} steps")))
}

/// Gaussian elimination with partial pivoting on a row-major `m x m` system.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    for k in 0..m {
        let p = (k..m).max_by(|&i, &j| a[i * m + k].abs().total_cmp(&a[j * m + k].abs()))?;
        if a[p * m + k].abs() < 1e-300 {
            return None;
        }
        if p != k {
            for j in 0..m {
                a.swap(k * m + j, p * m + j);
            }
            b.swap(k, p);
        }
        for i in k + 1..m {
            let f = a[i * m + k] / a[k * m + k];
            for j in k..m {
                a[i * m + j] -= f * a[k * m + j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let s: f64 = (k + 1..m).map(|j| a[k * m + j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k * m + k];
    }
    Some(x)
}
