use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::Rng;

/// Distribution of training noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    /// `ln sigma` uniform on `[ln sigma_min, ln sigma_max]`.
    #[default]
    LogUniform,
}

/// Per-noise-level loss weight `w(sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Constant,
    InverseVariance,
    /// `(sigma^2 + sd^2) / (sigma sd)^2`.
    EdmBalanced { sigma_data: f64 },
}

impl Weighting {
    pub fn weight(&self, sigma: f64) -> f64 {
        match *self {
            Weighting::Constant => 1.0,
            Weighting::InverseVariance => 1.0 / (sigma * sigma),
            Weighting::EdmBalanced { sigma_data } => {
                let sd2 = sigma_data * sigma_data;
                (sigma * sigma + sd2) / (sigma * sigma * sd2)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    #[serde(default)]
    pub noise_law: NoiseLaw,
    pub weighting: Weighting,
    /// Number of grid points, including the terminal zero.
    pub steps: usize,
    pub rho: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            noise_law: NoiseLaw::LogUniform,
            weighting: Weighting::Constant,
            steps: 64,
            rho: 7.0,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0) || !(self.sigma_max > self.sigma_min) || !self.sigma_max.is_finite() {
            return Err(invalid(format!(
                "need 0 < sigma_min < sigma_max, got ({}, {})",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.steps < 2 {
            return Err(invalid("sampling grid needs at least 2 points"));
        }
        if !(self.rho > 0.0) {
            return Err(invalid("grid exponent rho must be positive"));
        }
        if let Weighting::EdmBalanced { sigma_data } = self.weighting {
            if !(sigma_data > 0.0) {
                return Err(invalid("EDM weighting needs sigma_data > 0"));
            }
        }
        Ok(())
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn weight(&self, sigma: f64) -> f64 {
        self.weighting.weight(sigma)
    }

    /// One draw from the training noise law.
    pub fn sample_sigma(&self, rng: &mut Rng) -> f64 {
        match self.noise_law {
            NoiseLaw::LogUniform => {
                let (a, b) = (self.sigma_min.ln(), self.sigma_max.ln());
                (a + rng.uniform() * (b - a)).exp()
            }
        }
    }

    /// Decreasing sampling grid of length `steps`, from `sigma_max` to the
    /// terminal zero. Point `i < steps - 1` sits at fraction `i / (steps - 1)`
    /// of the way from `sigma_max^(1/rho)` to `sigma_min^(1/rho)`.
    pub fn sigma_grid(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.steps;
        let inv = 1.0 / self.rho;
        let hi = self.sigma_max.powf(inv);
        let lo = self.sigma_min.powf(inv);
        let mut grid = Vec::with_capacity(n);
        // The root/power round trip is not exact; pin the first point.
        grid.push(self.sigma_max);
        for i in 1..n - 1 {
            let frac = i as f64 / (n - 1) as f64;
            grid.push((hi + frac * (lo - hi)).powf(self.rho));
        }
        grid.push(0.0);
        Ok(grid)
    }
}
