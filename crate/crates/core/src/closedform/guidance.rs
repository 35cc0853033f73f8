use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;
use crate::worlds::GaussianMixture1d;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidancePoint {
    pub x_t: f64,
    /// `(1 + eta) score(x_t | c) - eta score(x_t)` from the analytic scores.
    pub s_cfg: f64,
    /// Minimizer of the Monte-Carlo estimate of the weighted objective.
    pub s_mc: f64,
    pub std_error: f64,
    /// `p_sigma(x_t | c) / p_sigma(x_t)` from the two densities.
    pub ratio_direct: f64,
    /// The same ratio as `p(c | x_t) / p(c)`.
    pub ratio_bayes: f64,
}

impl GuidancePoint {
    pub fn deviation(&self) -> f64 {
        (self.s_mc - self.s_cfg).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceReport {
    pub class: usize,
    pub eta: f64,
    pub sigma: f64,
    pub mc_samples: usize,
    pub points: Vec<GuidancePoint>,
}

impl GuidanceReport {
    pub fn max_abs_deviation(&self) -> f64 {
        self.points.iter().map(GuidancePoint::deviation).fold(0.0, f64::max)
    }

    /// Largest deviation in units of its standard error.
    pub fn max_z(&self) -> f64 {
        self.points
            .iter()
            .map(|p| if p.std_error > 0.0 { p.deviation() / p.std_error } else if p.deviation() == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }

    pub fn max_ratio_gap(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p.ratio_direct - p.ratio_bayes).abs())
            .fold(0.0, f64::max)
    }

    /// Every point within `k` standard errors.
    pub fn within(&self, k: f64) -> bool {
        self.points.iter().all(|p| p.deviation() <= k * p.std_error)
    }
}

struct Moments {
    mean: f64,
    var: f64,
}

fn posterior_moments(parts: &[(f64, f64, f64)], n: usize, rng: &mut Rng, x_t: f64, s2: f64) -> Moments {
    let w: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    // Welford would be overkill here; shift by x_t keeps the sums small.
    for _ in 0..n {
        let (_, m, v) = parts[rng.categorical(&w)];
        let x = m + v.sqrt() * rng.normal();
        let g = (x - x_t) / s2;
        sum += g;
        sum2 += g * g;
    }
    let nf = n as f64;
    let mean = sum / nf;
    Moments {
        mean,
        var: ((sum2 - nf * mean * mean) / (nf - 1.0)).max(0.0),
    }
}

/// At every grid point, minimizes the pointwise quadratic
/// `(1+eta) p(x_t|c) E[|g - s|^2 | x_t, c] - eta p(x_t) r E[|g - s|^2 | x_t]`
/// with `g = (x - x_t) / sigma^2` the transition score and
/// `r = p(x_t|c) / p(x_t)` the sample-adaptive weight. The two posterior
/// means of `g` are Monte-Carlo estimates from `mc_samples` exact posterior
/// draws each; the result is compared with the guided combination of the
/// analytic scores.
///
/// Draws for grid point `i` come from `Rng::new(seed).fork(i)`, so calls
/// that differ only in `eta` share their samples.
pub fn verify_weighted_guidance(
    world: &GaussianMixture1d,
    class: usize,
    eta: f64,
    sigma: f64,
    grid: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<GuidanceReport> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(invalid(format!("eta = {eta} must be non-negative")));
    }
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if mc_samples < 2 {
        return Err(invalid("need at least two Monte-Carlo samples"));
    }
    if class >= world.num_classes() {
        return Err(Error::OutOfRange {
            index: class,
            len: world.num_classes(),
        });
    }
    let s2 = sigma * sigma;
    let base = Rng::new(seed);
    let mut points = Vec::with_capacity(grid.len());
    for (i, &x_t) in grid.iter().enumerate() {
        let p_c = world.density(x_t, sigma, Some(class))?;
        let p_u = world.density(x_t, sigma, None)?;
        if !(p_c > 0.0 && p_u > 0.0) || !p_c.is_finite() || !p_u.is_finite() {
            return Err(Error::NonFinite(format!("degenerate density at x_t = {x_t}")));
        }
        let ratio_direct = p_c / p_u;
        let ratio_bayes = world.class_posterior(x_t, sigma, class)? / world.priors[class];

        let mut rng = base.fork(i as u64);
        let cond = posterior_moments(&world.posterior_components(x_t, sigma, Some(class))?, mc_samples, &mut rng, x_t, s2);
        let marg = posterior_moments(&world.posterior_components(x_t, sigma, None)?, mc_samples, &mut rng, x_t, s2);

        let wc = (1.0 + eta) * p_c;
        let wu = eta * p_u * ratio_bayes;
        let a = wc - wu;
        if !(a > 0.0) {
            return Err(Error::NonFinite(format!("objective not strictly convex at x_t = {x_t}")));
        }
        let s_mc = (wc * cond.mean - wu * marg.mean) / a;
        let n = mc_samples as f64;
        let std_error = ((wc / a).powi(2) * cond.var / n + (wu / a).powi(2) * marg.var / n).sqrt();
        let s_cfg = (1.0 + eta) * world.score(x_t, sigma, Some(class))? - eta * world.score(x_t, sigma, None)?;
        points.push(GuidancePoint {
            x_t,
            s_cfg,
            s_mc,
            std_error,
            ratio_direct,
            ratio_bayes,
        });
    }
    Ok(GuidanceReport {
        class,
        eta,
        sigma,
        mc_samples,
        points,
    })
}
