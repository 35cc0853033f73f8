use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component1d {
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
}

/// Class-conditional 1D Gaussian mixture with exact noised densities and
/// exact clean-data posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1d {
    pub priors: Vec<f64>,
    pub classes: Vec<Vec<Component1d>>,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * (x - mean) * (x - mean) / var
}

impl GaussianMixture1d {
    pub fn new(priors: Vec<f64>, classes: Vec<Vec<Component1d>>) -> Result<Self> {
        if priors.len() != classes.len() || priors.is_empty() {
            return Err(invalid("one prior per class required"));
        }
        let ok = |v: &[f64]| {
            v.iter().all(|&p| p >= 0.0 && p.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        };
        if !ok(&priors) {
            return Err(invalid("priors must be a probability vector"));
        }
        for comps in &classes {
            let w: Vec<f64> = comps.iter().map(|k| k.weight).collect();
            if comps.is_empty() || !ok(&w) || comps.iter().any(|k| !(k.var > 0.0)) {
                return Err(invalid("component weights/variances invalid"));
            }
        }
        Ok(Self { priors, classes })
    }

    /// Two overlapping classes, each a two-component mixture.
    pub fn two_class_default() -> Self {
        let k = |weight, mean, var| Component1d { weight, mean, var };
        Self {
            priors: vec![0.5, 0.5],
            classes: vec![
                vec![k(0.6, -1.5, 0.3), k(0.4, 0.5, 0.5)],
                vec![k(0.5, -0.5, 0.4), k(0.5, 1.8, 0.25)],
            ],
        }
    }

    /// One Gaussian per class, equal priors.
    pub fn single_gaussian_per_class(m0: f64, v0: f64, m1: f64, v1: f64) -> Self {
        let k = |mean, var| vec![Component1d { weight: 1.0, mean, var }];
        Self {
            priors: vec![0.5, 0.5],
            classes: vec![k(m0, v0), k(m1, v1)],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn components(&self, class: Option<usize>) -> Result<Vec<(f64, Component1d)>> {
        if let Some(c) = class {
            if c >= self.classes.len() {
                return Err(Error::OutOfRange {
                    index: c,
                    len: self.classes.len(),
                });
            }
        }
        let mut out = Vec::new();
        for (c, comps) in self.classes.iter().enumerate() {
            let prior = match class {
                Some(k) if k != c => continue,
                Some(_) => 1.0,
                None => self.priors[c],
            };
            for k in comps {
                out.push((prior * k.weight, *k));
            }
        }
        Ok(out)
    }

    /// `p_sigma(x | c)` (`class = Some(c)`) or `p_sigma(x)` (`None`).
    pub fn density(&self, x: f64, sigma: f64, class: Option<usize>) -> Result<f64> {
        let s2 = sigma * sigma;
        Ok(self
            .components(class)?
            .iter()
            .map(|(w, k)| w * log_normal(x, k.mean, k.var + s2).exp())
            .sum())
    }

    /// `d/dx log p_sigma(x | c)` or of the marginal.
    pub fn score(&self, x: f64, sigma: f64, class: Option<usize>) -> Result<f64> {
        let s2 = sigma * sigma;
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, k) in self.components(class)? {
            let v = k.var + s2;
            let p = w * log_normal(x, k.mean, v).exp();
            num += p * (k.mean - x) / v;
            den += p;
        }
        if !(den > 0.0) {
            return Err(Error::NonFinite(format!("zero density at x = {x}")));
        }
        Ok(num / den)
    }

    /// `p(c | x_t)` at noise level sigma.
    pub fn class_posterior(&self, x_t: f64, sigma: f64, c: usize) -> Result<f64> {
        let joint = self.priors.get(c).copied().unwrap_or(0.0) * self.density(x_t, sigma, Some(c))?;
        Ok(joint / self.density(x_t, sigma, None)?)
    }

    /// Mixture weights and Gaussian parameters `(weight, mean, var)` of the
    /// clean-data posterior `p(x | x_t, c)` (or `p(x | x_t)`).
    pub fn posterior_components(
        &self,
        x_t: f64,
        sigma: f64,
        class: Option<usize>,
    ) -> Result<Vec<(f64, f64, f64)>> {
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma(sigma));
        }
        let s2 = sigma * sigma;
        let comps = self.components(class)?;
        let logw: Vec<f64> = comps
            .iter()
            .map(|(w, k)| w.ln() + log_normal(x_t, k.mean, k.var + s2))
            .collect();
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = raw.iter().sum();
        Ok(comps
            .iter()
            .zip(raw)
            .map(|((_, k), r)| {
                let v = k.var + s2;
                (r / z, (k.mean * s2 + x_t * k.var) / v, k.var * s2 / v)
            })
            .collect())
    }

    pub fn sample_posterior(
        &self,
        x_t: f64,
        sigma: f64,
        class: Option<usize>,
        rng: &mut Rng,
    ) -> Result<f64> {
        let parts = self.posterior_components(x_t, sigma, class)?;
        let w: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let (_, m, v) = parts[rng.categorical(&w)];
        Ok(m + v.sqrt() * rng.normal())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_matches_finite_difference() {
        let w = GaussianMixture1d::two_class_default();
        for &(x, s) in &[(-1.0, 0.1), (0.3, 0.5), (2.2, 2.0)] {
            for class in [Some(0), Some(1), None] {
                let h = 1e-6;
                let fd = (w.density(x + h, s, class).unwrap().ln()
                    - w.density(x - h, s, class).unwrap().ln())
                    / (2.0 * h);
                let a = w.score(x, s, class).unwrap();
                assert!((fd - a).abs() < 1e-6 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn posterior_mean_gives_tweedie_score() {
        let w = GaussianMixture1d::two_class_default();
        let (x_t, s) = (0.4, 0.7);
        for class in [Some(0), None] {
            let mean: f64 = w
                .posterior_components(x_t, s, class)
                .unwrap()
                .iter()
                .map(|(p, m, _)| p * m)
                .sum();
            let tweedie = (mean - x_t) / (s * s);
            assert!((tweedie - w.score(x_t, s, class).unwrap()).abs() < 1e-12);
        }
    }
}
