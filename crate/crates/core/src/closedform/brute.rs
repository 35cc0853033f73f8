use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;
use crate::worlds::DiscreteProblem;

use super::SimplexDist;

pub const RESTARTS: usize = 50;
const INITIAL_STEP: f64 = 0.1;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-300;
const NONMONOTONE_MEMORY: usize = 10;

/// A smooth functional of a probability vector, maximized by
/// [`brute_force_simplex`].
pub trait SimplexObjective {
    fn value(&self, q: &[f64]) -> f64;
    fn gradient(&self, q: &[f64], out: &mut [f64]);
}

/// `constant + sum_x w_x log q_x`, with `0 log 0 := 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearObjective {
    pub weights: Vec<f64>,
    pub constant: f64,
}

impl SimplexObjective for LogLinearObjective {
    fn value(&self, q: &[f64]) -> f64 {
        self.constant
            + self
                .weights
                .iter()
                .zip(q)
                .map(|(&w, &v)| if w == 0.0 { 0.0 } else { w * v.ln() })
                .sum::<f64>()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for ((o, &w), &v) in out.iter_mut().zip(&self.weights).zip(q) {
            *o = if w == 0.0 { 0.0 } else { w / v };
        }
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Coefficients of `log q(x|k)` in `E_c E_{p(x|c)}[log q(x|c)]
/// + eta E_{c, c~, p(x|c)}[log q(x|c) - log q(x|c~)]`, accumulated by
/// walking every `(c, c~, x)` triple; `c~` is drawn from the priors
/// independently of `c`. The objective separates over classes, so only the
/// column of `class` is returned.
pub fn mle_mclr_population_objective(problem: &DiscreteProblem, class: usize, eta: f64) -> Result<LogLinearObjective> {
    let w = population_weights(problem, None, eta)?;
    let weights = w.get(class).cloned().ok_or(Error::OutOfRange {
        index: class,
        len: w.len(),
    })?;
    Ok(LogLinearObjective { weights, constant: 0.0 })
}

/// Same enumeration with the likelihood term replaced by
/// `-E_c KL(ref(.|c) || q(.|c))`; the entropy of the reference is carried
/// in `constant` so the value is the exact objective restricted to `class`.
pub fn kl_mclr_population_objective(
    problem: &DiscreteProblem,
    reference: &[Vec<f64>],
    class: usize,
    eta: f64,
) -> Result<LogLinearObjective> {
    if reference.len() != problem.num_classes() || reference.iter().any(|r| r.len() != problem.support()) {
        return Err(invalid("reference table shape does not match the problem"));
    }
    let w = population_weights(problem, Some(reference), eta)?;
    let weights = w.get(class).cloned().ok_or(Error::OutOfRange {
        index: class,
        len: w.len(),
    })?;
    let prior = problem.priors()[class];
    let constant = -reference[class].iter().map(|&r| prior * xlogy(r, r)).sum::<f64>();
    Ok(LogLinearObjective { weights, constant })
}

fn population_weights(problem: &DiscreteProblem, reference: Option<&[Vec<f64>]>, eta: f64) -> Result<Vec<Vec<f64>>> {
    if !(eta >= 0.0) {
        return Err(invalid(format!("eta = {eta} must be non-negative")));
    }
    let m = problem.num_classes();
    let s = problem.support();
    let priors = problem.priors();
    let cond = problem.cond();
    let mut w = vec![vec![0.0; s]; m];
    for c in 0..m {
        let base = reference.map_or(&cond[c], |r| &r[c]);
        for x in 0..s {
            w[c][x] += priors[c] * base[x];
        }
        for ct in 0..m {
            for x in 0..s {
                let mass = priors[c] * priors[ct] * cond[c][x];
                w[c][x] += eta * mass;
                w[ct][x] -= eta * mass;
            }
        }
    }
    Ok(w)
}

/// Euclidean projection onto `{q : q_i >= delta, sum q = 1}`.
pub fn project_floored_simplex(v: &[f64], delta: f64) -> Vec<f64> {
    let mass = 1.0 - delta * v.len() as f64;
    let y: Vec<f64> = v.iter().map(|x| x - delta).collect();
    let mut u = y.clone();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - mass) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    // With large trial steps `x - theta` cancels badly; rescaling the
    // excess over the floor keeps the result on the simplex to rounding.
    let mut z: Vec<f64> = y.iter().map(|x| (x - theta).max(0.0)).collect();
    let total: f64 = z.iter().sum();
    if total > 0.0 {
        z.iter_mut().for_each(|v| *v *= mass / total);
    }
    z.into_iter().map(|v| v + delta).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceReport {
    pub dist: SimplexDist,
    pub value: f64,
    /// Index of the restart that produced the best iterate.
    pub best_restart: usize,
    /// Gradient steps summed over all restarts.
    pub steps: usize,
}

/// Projected gradient ascent on the floored simplex from [`RESTARTS`]
/// starting points (the uniform vector, then random Dirichlet draws).
///
/// The first trial step is 0.1; later ones use the Barzilai-Borwein
/// length `|s|^2 / |s . y|` from the previous move `s` and gradient change
/// `y`, measured on the atoms above the floor. A trial is halved until it clears a non-monotone Armijo test
/// against the best of the last few values. Returns the best iterate seen.
pub fn brute_force_simplex(
    objective: &dyn SimplexObjective,
    support: usize,
    delta: f64,
    iterations: usize,
    rng: &mut Rng,
) -> Result<BruteForceReport> {
    if support == 0 || !(delta >= 0.0) || delta * support as f64 >= 1.0 {
        return Err(invalid(format!("floor delta = {delta} must lie in [0, 1/{support})")));
    }
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut steps = 0;
    let mut grad = vec![0.0; support];
    let mut next_grad = vec![0.0; support];
    for restart in 0..RESTARTS {
        let start = if restart == 0 {
            vec![1.0 / support as f64; support]
        } else {
            rng.flat_dirichlet(support)
        };
        let mut q = project_floored_simplex(&start, delta);
        let mut f = objective.value(&q);
        let mut recent = std::collections::VecDeque::from([f]);
        let mut step = INITIAL_STEP;
        objective.gradient(&q, &mut grad);
        for _ in 0..iterations {
            steps += 1;
            let reference = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut moved = None;
            let mut t = step;
            while t > MIN_STEP {
                let trial: Vec<f64> = q.iter().zip(&grad).map(|(a, g)| a + t * g).collect();
                let cand = project_floored_simplex(&trial, delta);
                let ascent: f64 = grad.iter().zip(cand.iter().zip(&q)).map(|(g, (a, b))| g * (a - b)).sum();
                if !(ascent > 0.0) {
                    break;
                }
                let fc = objective.value(&cand);
                if fc.is_finite() && fc >= reference + ARMIJO * ascent {
                    moved = Some((cand, fc));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, fc)) = moved else {
                if step != INITIAL_STEP {
                    step = INITIAL_STEP;
                    continue;
                }
                break;
            };
            objective.gradient(&cand, &mut next_grad);
            // Atoms pinned at the floor are handled by the projection; their
            // curvature would otherwise dictate the spectral step.
            let (mut ss, mut sy) = (0.0, 0.0);
            for i in 0..support {
                if cand[i] <= delta || q[i] <= delta {
                    continue;
                }
                let si = cand[i] - q[i];
                ss += si * si;
                sy += si * (next_grad[i] - grad[i]);
            }
            step = if sy < 0.0 { (ss / -sy).clamp(1e-30, 1e30) } else { 1e30 };
            q = cand;
            f = fc;
            std::mem::swap(&mut grad, &mut next_grad);
            recent.push_back(f);
            if recent.len() > NONMONOTONE_MEMORY {
                recent.pop_front();
            }
            if best.as_ref().map_or(true, |(bf, _, _)| f > *bf) {
                best = Some((f, q.clone(), restart));
            }
        }
        if best.as_ref().map_or(true, |(bf, _, _)| f > *bf) {
            best = Some((f, q, restart));
        }
    }
    let (value, q, best_restart) = best.expect("at least one restart");
    // Projection arithmetic can leave the sum a few ulps away from one.
    let z: f64 = q.iter().sum();
    let dist = SimplexDist::new(q.into_iter().map(|v| v / z).collect())?;
    Ok(BruteForceReport {
        dist,
        value,
        best_restart,
        steps,
    })
}
