//! Exact population values of the inter-class likelihood-ratio regularizer
//! for an explicit model table `q[c][x]`, in its three equivalent forms.
//! The mismatched class is drawn from the priors independently of the true
//! class. Terms with zero probability weight are skipped (`0 log 0 = 0`).

use crate::error::{invalid, Result};
use crate::worlds::{CondTable, DiscreteProblem};

fn check(problem: &DiscreteProblem, q: &CondTable) -> Result<()> {
    if q.len() != problem.num_classes() || q.iter().any(|c| c.len() != problem.support()) {
        return Err(invalid("model table shape differs from the problem"));
    }
    if q.iter().flatten().any(|&v| !(v > 0.0)) {
        return Err(invalid("model table must be strictly positive"));
    }
    Ok(())
}

/// `1/2 E_{c, c~, x ~ p(.|c), y ~ p(.|c~)} [log q(x|c)/q(x|c~) + log q(y|c~)/q(y|c)]`.
pub fn symmetric_form(problem: &DiscreteProblem, q: &CondTable) -> Result<f64> {
    check(problem, q)?;
    let (p, pc) = (problem.cond(), problem.priors());
    let (m, s) = (problem.num_classes(), problem.support());
    let mut total = 0.0;
    for c in 0..m {
        for ct in 0..m {
            for x in 0..s {
                for y in 0..s {
                    let w = pc[c] * pc[ct] * p[c][x] * p[ct][y];
                    if w == 0.0 {
                        continue;
                    }
                    let a = (q[c][x] / q[ct][x]).ln();
                    let b = (q[ct][y] / q[c][y]).ln();
                    total += 0.5 * w * (a + b);
                }
            }
        }
    }
    Ok(total)
}

/// `E_{c, c~, x ~ p(.|c)} [log q(x|c)/q(x|c~)]`.
pub fn paired_form(problem: &DiscreteProblem, q: &CondTable) -> Result<f64> {
    check(problem, q)?;
    let (p, pc) = (problem.cond(), problem.priors());
    let mut total = 0.0;
    for c in 0..problem.num_classes() {
        for ct in 0..problem.num_classes() {
            for x in 0..problem.support() {
                let w = pc[c] * pc[ct] * p[c][x];
                if w != 0.0 {
                    total += w * (q[c][x] / q[ct][x]).ln();
                }
            }
        }
    }
    Ok(total)
}

/// `E_{c, x ~ p(.|c), y ~ p(.)} [log q(x|c)/q(y|c)]`.
pub fn marginal_form(problem: &DiscreteProblem, q: &CondTable) -> Result<f64> {
    check(problem, q)?;
    let (p, pc, pm) = (problem.cond(), problem.priors(), problem.marginal());
    let mut total = 0.0;
    for c in 0..problem.num_classes() {
        for x in 0..problem.support() {
            for y in 0..problem.support() {
                let w = pc[c] * p[c][x] * pm[y];
                if w != 0.0 {
                    total += w * (q[c][x] / q[c][y]).ln();
                }
            }
        }
    }
    Ok(total)
}
