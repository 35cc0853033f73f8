//! Variance-exploding corruption, score/denoiser conversion, guided scores
//! and the probability-flow sampler. The noise level sigma is the clock.

pub mod sampler;
pub mod schedule;

pub use sampler::{
    guided_field, initial_latents, sample_ode, sample_ode_from, AnalyticScore, DenoiserScore,
    GuidanceMode, GuidanceSpec, ScoreSource,
};
pub use schedule::{NoiseLaw, NoiseSchedule, Weighting};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn check_sigmas(x: &Tensor, sigma: &[f64]) -> Result<()> {
    if sigma.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.rows()],
            actual: vec![sigma.len()],
        });
    }
    Ok(())
}

/// `x_t = x + sigma * eps`, one sigma per row.
pub fn corrupt(x: &Tensor, sigma: &[f64], eps: &Tensor) -> Result<Tensor> {
    eps.ensure_shape(x.shape())?;
    check_sigmas(x, sigma)?;
    if let Some(&s) = sigma.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::NonPositiveSigma(s));
    }
    let mut out = x.clone();
    for (r, &s) in sigma.iter().enumerate() {
        let e = eps.row(r);
        for (v, &ev) in out.row_mut(r).iter_mut().zip(e) {
            *v += s * ev;
        }
    }
    Ok(out)
}

/// Tweedie: `score = (D - x_t) / sigma^2`, one sigma per row.
pub fn score_from_denoiser(d_out: &Tensor, x_t: &Tensor, sigma: &[f64]) -> Result<Tensor> {
    d_out.ensure_shape(x_t.shape())?;
    check_sigmas(x_t, sigma)?;
    let mut out = d_out.clone();
    for (r, &s) in sigma.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSigma(s));
        }
        let s2 = s * s;
        let xr = x_t.row(r);
        for (v, &xv) in out.row_mut(r).iter_mut().zip(xr) {
            *v = (*v - xv) / s2;
        }
    }
    Ok(out)
}

/// `(1 + gamma) s_plus - gamma s_minus`.
pub fn guided_score(s_plus: &Tensor, s_minus: &Tensor, gamma: f64) -> Result<Tensor> {
    s_minus.ensure_shape(s_plus.shape())?;
    let data = s_plus
        .data()
        .iter()
        .zip(s_minus.data())
        .map(|(p, m)| (1.0 + gamma) * p - gamma * m)
        .collect();
    Tensor::new(s_plus.shape().to_vec(), data)
}
