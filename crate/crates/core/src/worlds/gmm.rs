use serde::{Deserialize, Serialize};

use super::mat2::{self, Mat2};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Rng, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: Mat2,
}

/// Labelled samples `(x_i, c_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.rows()],
                actual: vec![labels.len()],
            });
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn distinct_labels(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

/// Class-conditional 2D Gaussian mixture with exact densities and exact
/// scores of the noised marginals `p_sigma = p * N(0, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureWorld {
    pub priors: Vec<f64>,
    pub classes: Vec<Vec<Component>>,
}

fn log_normal(x: [f64; 2], mean: [f64; 2], cov: &Mat2) -> f64 {
    let inv = mat2::inverse(cov).expect("covariance is SPD");
    let d = [x[0] - mean[0], x[1] - mean[1]];
    let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    -LN_2PI - 0.5 * mat2::det(cov).ln() - 0.5 * q
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

fn check_prob(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() || v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(invalid(format!("{what}: entries must be finite and non-negative")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

impl GaussianMixtureWorld {
    pub fn new(priors: Vec<f64>, classes: Vec<Vec<Component>>) -> Result<Self> {
        let w = Self { priors, classes };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.priors.len() != self.classes.len() {
            return Err(invalid("one prior per class required"));
        }
        check_prob(&self.priors, "priors")?;
        for (c, comps) in self.classes.iter().enumerate() {
            let w: Vec<f64> = comps.iter().map(|k| k.weight).collect();
            check_prob(&w, &format!("class {c} weights"))?;
            for k in comps {
                if !mat2::is_spd(&k.cov) {
                    return Err(invalid(format!("class {c}: covariance not SPD")));
                }
            }
        }
        Ok(())
    }

    /// Two classes with two components each on the radius-2 circle:
    /// class 0 at 0 and 180 degrees, class 1 at 90 and 270 degrees,
    /// covariance `0.25 I`, equal priors and weights.
    pub fn default_world() -> Self {
        let classes = (0..2)
            .map(|c| {
                (0..2)
                    .map(|k| {
                        let theta = std::f64::consts::FRAC_PI_2 * (c + 2 * k) as f64;
                        Component {
                            weight: 0.5,
                            mean: [2.0 * theta.cos(), 2.0 * theta.sin()],
                            cov: [[0.25, 0.0], [0.0, 0.25]],
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            priors: vec![0.5, 0.5],
            classes,
        }
    }

    /// One class, one Gaussian `N(mean, var I)`.
    pub fn single_gaussian(mean: [f64; 2], var: f64) -> Self {
        Self {
            priors: vec![1.0],
            classes: vec![vec![Component {
                weight: 1.0,
                mean,
                cov: [[var, 0.0], [0.0, var]],
            }]],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.classes.len() {
            return Err(Error::OutOfRange {
                index: c,
                len: self.classes.len(),
            });
        }
        Ok(())
    }

    fn check_sigma(sigma: f64) -> Result<()> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::NonPositiveSigma(sigma));
        }
        Ok(())
    }

    /// `(log weight, mean, noised covariance)` of every component of the
    /// class (or of the marginal when `class` is `None`, weights then include
    /// the priors).
    fn noised_components(&self, sigma: f64, class: Option<usize>) -> Vec<(f64, [f64; 2], Mat2)> {
        let s2 = sigma * sigma;
        let mut out = Vec::new();
        for (c, comps) in self.classes.iter().enumerate() {
            let prior = match class {
                Some(k) if k != c => continue,
                Some(_) => 1.0,
                None => self.priors[c],
            };
            for k in comps {
                out.push(((prior * k.weight).ln(), k.mean, mat2::add_iso(&k.cov, s2)));
            }
        }
        out
    }

    fn mixture_log_density(comps: &[(f64, [f64; 2], Mat2)], x: [f64; 2]) -> f64 {
        let terms: Vec<f64> = comps.iter().map(|(lw, m, s)| lw + log_normal(x, *m, s)).collect();
        log_sum_exp(&terms)
    }

    fn mixture_score(comps: &[(f64, [f64; 2], Mat2)], x: [f64; 2]) -> [f64; 2] {
        let terms: Vec<f64> = comps.iter().map(|(lw, m, s)| lw + log_normal(x, *m, s)).collect();
        let lse = log_sum_exp(&terms);
        let mut g = [0.0; 2];
        for ((_, m, s), t) in comps.iter().zip(&terms) {
            let r = (t - lse).exp();
            let inv = mat2::inverse(s).expect("SPD");
            let v = mat2::apply(&inv, [m[0] - x[0], m[1] - x[1]]);
            g[0] += r * v[0];
            g[1] += r * v[1];
        }
        g
    }

    /// `log p_sigma(x | c)`.
    pub fn log_cond_density(&self, x: [f64; 2], sigma: f64, c: usize) -> Result<f64> {
        self.check_class(c)?;
        Self::check_sigma(sigma)?;
        Ok(Self::mixture_log_density(&self.noised_components(sigma, Some(c)), x))
    }

    /// `log p_sigma(x)`.
    pub fn log_marginal_density(&self, x: [f64; 2], sigma: f64) -> Result<f64> {
        Self::check_sigma(sigma)?;
        Ok(Self::mixture_log_density(&self.noised_components(sigma, None), x))
    }

    /// `grad_x log p_sigma(x | c)`.
    pub fn noised_cond_score(&self, x: [f64; 2], sigma: f64, c: usize) -> Result<[f64; 2]> {
        self.check_class(c)?;
        Self::check_sigma(sigma)?;
        Ok(Self::mixture_score(&self.noised_components(sigma, Some(c)), x))
    }

    /// `grad_x log p_sigma(x)`.
    pub fn noised_uncond_score(&self, x: [f64; 2], sigma: f64) -> Result<[f64; 2]> {
        Self::check_sigma(sigma)?;
        Ok(Self::mixture_score(&self.noised_components(sigma, None), x))
    }

    /// Index of `argmax_c p(c) p(x|c)` at sigma = 0; ties go to the lowest
    /// class index.
    pub fn bayes_class(&self, x: [f64; 2]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..self.num_classes() {
            let v = self.priors[c].ln()
                + Self::mixture_log_density(&self.noised_components(0.0, Some(c)), x);
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        best
    }

    fn draw_component(comps: &[Component], rng: &mut Rng) -> [f64; 2] {
        let w: Vec<f64> = comps.iter().map(|k| k.weight).collect();
        let k = &comps[rng.categorical(&w)];
        let l = mat2::cholesky(&k.cov);
        let z = [rng.normal(), rng.normal()];
        let v = mat2::apply(&l, z);
        [k.mean[0] + v[0], k.mean[1] + v[1]]
    }

    /// `n` draws from `p(x | c)`.
    pub fn sample_class(&self, c: usize, n: usize, rng: &mut Rng) -> Result<Tensor> {
        self.check_class(c)?;
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            data.extend_from_slice(&Self::draw_component(&self.classes[c], rng));
        }
        Tensor::matrix(n, 2, data)
    }

    /// `n` i.i.d. draws of `(c, x) ~ p(c) p(x | c)`.
    pub fn sample_labeled(&self, n: usize, rng: &mut Rng) -> Result<LabeledBatch> {
        if n == 0 {
            return Err(invalid("sample_labeled needs n >= 1"));
        }
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.categorical(&self.priors);
            labels.push(c);
            data.extend_from_slice(&Self::draw_component(&self.classes[c], rng));
        }
        LabeledBatch::new(Tensor::matrix(n, 2, data)?, labels)
    }

    /// One draw from the clean-data posterior `p(x | x_t, c)` (or `p(x | x_t)`
    /// when `class` is `None`) under the transition `N(x_t; x, sigma^2 I)`.
    pub fn sample_posterior(
        &self,
        x_t: [f64; 2],
        sigma: f64,
        class: Option<usize>,
        rng: &mut Rng,
    ) -> Result<[f64; 2]> {
        if let Some(c) = class {
            self.check_class(c)?;
        }
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma(sigma));
        }
        let s2 = sigma * sigma;
        let mut logw = Vec::new();
        let mut parts = Vec::new();
        for (c, comps) in self.classes.iter().enumerate() {
            let prior = match class {
                Some(k) if k != c => continue,
                Some(_) => 1.0,
                None => self.priors[c],
            };
            for k in comps {
                logw.push((prior * k.weight).ln() + log_normal(x_t, k.mean, &mat2::add_iso(&k.cov, s2)));
                parts.push(k);
            }
        }
        let lse = log_sum_exp(&logw);
        let w: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
        let k = parts[rng.categorical(&w)];
        let prec = mat2::add_iso(&mat2::inverse(&k.cov).expect("SPD"), 1.0 / s2);
        let post_cov = mat2::inverse(&prec).expect("SPD");
        let a = mat2::apply(&mat2::inverse(&k.cov).expect("SPD"), k.mean);
        let post_mean = mat2::apply(&post_cov, [a[0] + x_t[0] / s2, a[1] + x_t[1] / s2]);
        let l = mat2::cholesky(&post_cov);
        let v = mat2::apply(&l, [rng.normal(), rng.normal()]);
        Ok([post_mean[0] + v[0], post_mean[1] + v[1]])
    }

    /// Per-coordinate pooled standard deviation of `p(x)`, exact.
    pub fn data_std(&self) -> f64 {
        let mut mean = [0.0; 2];
        let mut second = 0.0;
        for (c, comps) in self.classes.iter().enumerate() {
            for k in comps {
                let w = self.priors[c] * k.weight;
                mean[0] += w * k.mean[0];
                mean[1] += w * k.mean[1];
                second += w * (mat2::trace(&k.cov) + k.mean[0].powi(2) + k.mean[1].powi(2));
            }
        }
        ((second - mean[0].powi(2) - mean[1].powi(2)) / 2.0).sqrt()
    }
}
