use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use super::{guided_score, score_from_denoiser};
use crate::error::{invalid, Error, Result};
use crate::numerics::{DenoiserModel, Rng, Tensor};
use crate::worlds::GaussianMixtureWorld;

/// Anything that can return `grad_x log p_sigma(x | class)` for a batch at a
/// single noise level. `class = None` asks for the unconditional score.
pub trait ScoreSource {
    fn score(&self, x: &Tensor, sigma: f64, class: Option<usize>) -> Result<Tensor>;
}

/// Learned score via the denoiser: both guidance channels go through this
/// one model, the unconditional channel uses the null-class row.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserScore<'a> {
    pub model: &'a DenoiserModel,
}

impl ScoreSource for DenoiserScore<'_> {
    fn score(&self, x: &Tensor, sigma: f64, class: Option<usize>) -> Result<Tensor> {
        let n = x.rows();
        let sig = vec![sigma; n];
        let d = self.model.forward(x, &sig, &vec![class; n])?;
        score_from_denoiser(&d, x, &sig)
    }
}

/// Exact noised scores of an analytic world.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticScore<'a> {
    pub world: &'a GaussianMixtureWorld,
}

impl ScoreSource for AnalyticScore<'_> {
    fn score(&self, x: &Tensor, sigma: f64, class: Option<usize>) -> Result<Tensor> {
        let mut out = Vec::with_capacity(x.len());
        for r in x.iter_rows() {
            let p = [r[0], r[1]];
            let s = match class {
                Some(c) => self.world.noised_cond_score(p, sigma, c)?,
                None => self.world.noised_uncond_score(p, sigma)?,
            };
            out.extend_from_slice(&s);
        }
        Tensor::matrix(x.rows(), 2, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Conditional score only.
    #[default]
    None,
    /// Conditional minus unconditional (null-class) score.
    Cfg,
    /// Conditional score of the target class against another class's score.
    TwoScore { negative_class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    pub gamma: f64,
}

impl GuidanceSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn cfg(gamma: f64) -> Self {
        Self {
            mode: GuidanceMode::Cfg,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != GuidanceMode::None && !(self.gamma >= -1.0) {
            return Err(invalid(format!("guidance strength {} below -1", self.gamma)));
        }
        Ok(())
    }
}

/// The score field the sampler integrates for `class` under `guidance`.
pub fn guided_field<S: ScoreSource + ?Sized>(
    source: &S,
    guidance: &GuidanceSpec,
    x: &Tensor,
    sigma: f64,
    class: usize,
) -> Result<Tensor> {
    let plus = source.score(x, sigma, Some(class))?;
    match guidance.mode {
        GuidanceMode::None => Ok(plus),
        GuidanceMode::Cfg => {
            let minus = source.score(x, sigma, None)?;
            guided_score(&plus, &minus, guidance.gamma)
        }
        GuidanceMode::TwoScore { negative_class } => {
            let minus = source.score(x, sigma, Some(negative_class))?;
            guided_score(&plus, &minus, guidance.gamma)
        }
    }
}

/// Integrates the probability-flow ODE `dx/dsigma = -sigma * s(x, sigma)`
/// from the latent `x_init` (already at scale `sigma_max`) down the
/// schedule's grid. Heun steps between positive grid points, a final Euler
/// step into `sigma = 0`.
pub fn sample_ode_from<S: ScoreSource + ?Sized>(
    source: &S,
    schedule: &NoiseSchedule,
    guidance: &GuidanceSpec,
    class: usize,
    x_init: Tensor,
) -> Result<Tensor> {
    guidance.validate()?;
    let grid = schedule.sigma_grid()?;
    let mut x = x_init;
    for (i, w) in grid.windows(2).enumerate() {
        let (s, s_next) = (w[0], w[1]);
        let h = s_next - s;
        let score = guided_field(source, guidance, &x, s, class)?;
        // dx/dsigma = -sigma * score
        let slope = scale(&score, -s);
        let euler = x.add_scaled(&slope, h)?;
        x = if s_next > 0.0 {
            let score2 = guided_field(source, guidance, &euler, s_next, class)?;
            let slope2 = scale(&score2, -s_next);
            let avg = slope.add_scaled(&slope2, 1.0)?;
            x.add_scaled(&avg, 0.5 * h)?
        } else {
            euler
        };
        if !x.all_finite() {
            return Err(Error::NonFinite(format!("sampler state after step {i}")));
        }
    }
    Ok(x)
}

fn scale(t: &Tensor, a: f64) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= a);
    out
}

/// Latents `x_T ~ N(0, sigma_max^2 I)` for `n` rows of dimension `dim`.
pub fn initial_latents(schedule: &NoiseSchedule, dim: usize, n: usize, rng: &mut Rng) -> Result<Tensor> {
    let z = rng.normals(n * dim);
    let mut t = Tensor::matrix(n, dim, z)?;
    t.data_mut().iter_mut().for_each(|v| *v *= schedule.sigma_max);
    Ok(t)
}

/// Draws `n` latents and integrates them. Deterministic given `rng`.
pub fn sample_ode<S: ScoreSource + ?Sized>(
    source: &S,
    schedule: &NoiseSchedule,
    guidance: &GuidanceSpec,
    class: usize,
    n: usize,
    dim: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    let x = initial_latents(schedule, dim, n, rng)?;
    sample_ode_from(source, schedule, guidance, class, x)
}
