use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;

/// Conditional table stored column-wise: `table[c][x] = p(x | c)`.
pub type CondTable = Vec<Vec<f64>>;

/// Finite sample space with exact class-conditional tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteProblem {
    cond: CondTable,
    priors: Vec<f64>,
    #[serde(skip)]
    marginal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<CondTable>,
}

fn check_column(col: &[f64], what: &str) -> Result<()> {
    if col.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(invalid(format!("{what}: negative or non-finite entry")));
    }
    let s: f64 = col.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

fn marginal_of(cond: &CondTable, priors: &[f64]) -> Vec<f64> {
    let s = cond[0].len();
    (0..s)
        .map(|x| cond.iter().zip(priors).map(|(col, p)| p * col[x]).sum())
        .collect()
}

impl DiscreteProblem {
    pub fn new(cond: CondTable, priors: Vec<f64>) -> Result<Self> {
        let mut p = Self {
            cond,
            priors,
            marginal: Vec::new(),
            reference: None,
        };
        p.finish()?;
        Ok(p)
    }

    /// Re-validates and recomputes derived fields; needed after
    /// deserialization.
    pub fn finish(&mut self) -> Result<()> {
        if self.cond.is_empty() || self.cond.len() != self.priors.len() {
            return Err(invalid("need one column and one prior per class"));
        }
        let s = self.cond[0].len();
        if s == 0 || self.cond.iter().any(|c| c.len() != s) {
            return Err(invalid("columns must share a non-zero support size"));
        }
        for (c, col) in self.cond.iter().enumerate() {
            check_column(col, &format!("p(.|c={c})"))?;
        }
        check_column(&self.priors, "priors")?;
        if let Some(r) = &self.reference {
            Self::check_table(r, s, self.cond.len(), "reference")?;
        }
        self.marginal = marginal_of(&self.cond, &self.priors);
        Ok(())
    }

    fn check_table(t: &CondTable, s: usize, m: usize, what: &str) -> Result<()> {
        if t.len() != m || t.iter().any(|c| c.len() != s) {
            return Err(invalid(format!("{what}: expected {m} columns of length {s}")));
        }
        for (c, col) in t.iter().enumerate() {
            check_column(col, &format!("{what} column {c}"))?;
        }
        Ok(())
    }

    /// Columns and priors drawn from flat Dirichlet distributions.
    pub fn random(support: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        if support == 0 || classes == 0 {
            return Err(invalid("support and class count must be positive"));
        }
        let cond: CondTable = (0..classes).map(|_| rng.flat_dirichlet(support)).collect();
        let priors = rng.flat_dirichlet(classes);
        Self::new(cond, priors)
    }

    /// The three-point, two-class example used throughout the docs:
    /// `p(.|0) = (0.7, 0.2, 0.1)`, `p(.|1) = (0.1, 0.2, 0.7)`, equal priors.
    pub fn three_point_example() -> Self {
        Self::new(
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.2, 0.7]],
            vec![0.5, 0.5],
        )
        .expect("valid example")
    }

    pub fn support(&self) -> usize {
        self.cond[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.cond.len()
    }

    pub fn cond(&self) -> &CondTable {
        &self.cond
    }

    pub fn cond_column(&self, c: usize) -> Result<&[f64]> {
        self.cond.get(c).map(Vec::as_slice).ok_or(Error::OutOfRange {
            index: c,
            len: self.cond.len(),
        })
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    pub fn reference(&self) -> Option<&CondTable> {
        self.reference.as_ref()
    }

    pub fn with_reference(mut self, reference: CondTable) -> Result<Self> {
        Self::check_table(&reference, self.support(), self.num_classes(), "reference")?;
        self.reference = Some(reference);
        Ok(self)
    }

    /// `(p(x | c), p(x))`.
    pub fn densities(&self, x: usize, c: usize) -> Result<(f64, f64)> {
        let col = self.cond_column(c)?;
        let px = col.get(x).ok_or(Error::OutOfRange {
            index: x,
            len: col.len(),
        })?;
        Ok((*px, self.marginal[x]))
    }

    /// Mixture error model: `(1 - eta) p(x|c) + eta p(x)` per class.
    pub fn mixture_ref(&self, eta: f64) -> Result<CondTable> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid(format!("leakage eta = {eta} outside [0, 1]")));
        }
        Ok(self
            .cond
            .iter()
            .map(|col| {
                col.iter()
                    .zip(&self.marginal)
                    .map(|(p, m)| (1.0 - eta) * p + eta * m)
                    .collect()
            })
            .collect())
    }

    /// Gamma-powered error model: `p(x|c)^(1 - 1/beta) p(x)^(1/beta)`,
    /// renormalized per class.
    pub fn gamma_ref(&self, beta: f64) -> Result<CondTable> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid(format!("beta = {beta} must be positive")));
        }
        let a = 1.0 - 1.0 / beta;
        let b = 1.0 / beta;
        let pow = |v: f64, e: f64| if e == 0.0 { 1.0 } else { v.powf(e) };
        let mut out = Vec::with_capacity(self.cond.len());
        for (c, col) in self.cond.iter().enumerate() {
            let raw: Vec<f64> = col
                .iter()
                .zip(&self.marginal)
                .map(|(&p, &m)| {
                    if p == 0.0 && m == 0.0 {
                        0.0
                    } else {
                        pow(p, a) * pow(m, b)
                    }
                })
                .collect();
            let z: f64 = raw.iter().sum();
            if !(z > 0.0) || !z.is_finite() {
                return Err(Error::NotNormalizable(format!("gamma reference column {c}")));
            }
            out.push(raw.into_iter().map(|v| v / z).collect());
        }
        Ok(out)
    }
}
