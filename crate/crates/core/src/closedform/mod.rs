//! Exact optima of the contrastive objectives on finite problems, the
//! brute-force oracles that check them, and the pointwise guidance check on
//! a 1D mixture.

mod brute;
mod contrastive;
mod mclr;
mod guidance;

pub use brute::{
    brute_force_simplex, kl_mclr_population_objective, mle_mclr_population_objective, project_floored_simplex,
    BruteForceReport, LogLinearObjective, SimplexObjective, RESTARTS,
};
pub use contrastive::{
    brute_force_contrastive, cca_normalizing_lambda, ccdpo_optimum, dpo_optimal_reward, ContrastiveKind,
    ContrastiveReport,
};
pub use mclr::{clipped_mass, mclr_optimum, mclr_optimum_limit, mclr_target, BisectionReport, MAX_BISECTIONS};
pub use guidance::{verify_weighted_guidance, GuidancePoint, GuidanceReport};

use crate::error::{invalid, Error, Result};

/// Probability vector over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexDist {
    probs: Vec<f64>,
}

impl SimplexDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("empty support"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::NonFinite("negative or non-finite probability".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes a non-negative vector.
    pub fn normalize(raw: Vec<f64>) -> Result<Self> {
        let z: f64 = raw.iter().sum();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::NotNormalizable(format!("total mass {z}")));
        }
        Self::new(raw.into_iter().map(|v| v / z).collect())
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        total_variation(&self.probs, other)
    }
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "total variation of vectors with different supports");
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
