//! Minibatch losses in denoiser form. Each returns the mean loss and its
//! exact gradient with respect to the trainable model's parameters.

use super::tuples::{ContrastiveTuple, DenoisingTerm, PreferenceTuple};
use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::{DenoiserModel, ForwardCache, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    fn zero(model: &DenoiserModel) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; model.param_count()],
        }
    }
}

/// `log(1 + e^u)` without overflow.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Rows fed to the network in one pass.
struct Rows {
    x_t: Vec<f64>,
    sigma: Vec<f64>,
    class: Vec<Option<usize>>,
    dim: usize,
}

impl Rows {
    fn new(dim: usize) -> Self {
        Self {
            x_t: Vec::new(),
            sigma: Vec::new(),
            class: Vec::new(),
            dim,
        }
    }

    fn push(&mut self, x: &[f64], eps: &[f64], sigma: f64, class: Option<usize>) -> Result<()> {
        if x.len() != self.dim || eps.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim],
                actual: vec![x.len(), eps.len()],
            });
        }
        self.x_t.extend(x.iter().zip(eps).map(|(a, e)| a + sigma * e));
        self.sigma.push(sigma);
        self.class.push(class);
        Ok(())
    }

    fn tensor(&self) -> Result<Tensor> {
        Tensor::matrix(self.sigma.len(), self.dim, self.x_t.clone())
    }

    fn forward_cached(&self, model: &DenoiserModel) -> Result<(Tensor, ForwardCache)> {
        model.forward_cached(&self.tensor()?, &self.sigma, &self.class)
    }

    fn forward(&self, model: &DenoiserModel) -> Result<Tensor> {
        model.forward(&self.tensor()?, &self.sigma, &self.class)
    }
}

fn sq_err(x: &[f64], d: &[f64]) -> f64 {
    x.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Writes `scale * (d - x)` into `out`.
fn residual_into(out: &mut [f64], d: &[f64], x: &[f64], scale: f64) {
    for ((o, &dv), &xv) in out.iter_mut().zip(d).zip(x) {
        *o = scale * (dv - xv);
    }
}

fn backprop(model: &DenoiserModel, cache: &ForwardCache, upstream: Vec<f64>, dim: usize, grad: &mut [f64]) -> Result<()> {
    let n = upstream.len() / dim;
    model.backward_cached(cache, &Tensor::matrix(n, dim, upstream)?, grad)?;
    Ok(())
}

fn check_reference(model: &DenoiserModel, reference: &DenoiserModel) -> Result<()> {
    if model.architecture() != reference.architecture() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.param_count()],
            actual: vec![reference.param_count()],
        });
    }
    Ok(())
}

/// `mean_i w(sigma_i) |x_i - D(x_i + sigma_i eps_i; sigma_i, c_i)|^2`.
pub fn dsm_loss(model: &DenoiserModel, terms: &[DenoisingTerm], schedule: &NoiseSchedule) -> Result<LossValue> {
    let mut out = LossValue::zero(model);
    if terms.is_empty() {
        return Ok(out);
    }
    let dim = model.architecture().data_dim;
    let mut rows = Rows::new(dim);
    for t in terms {
        rows.push(&t.x, &t.eps, t.sigma, t.class)?;
    }
    let (d, cache) = rows.forward_cached(model)?;
    let n = terms.len() as f64;
    let mut up = vec![0.0; terms.len() * dim];
    let mut total = 0.0;
    for (i, t) in terms.iter().enumerate() {
        let w = schedule.weight(t.sigma);
        total += w * sq_err(&t.x, d.row(i));
        residual_into(&mut up[i * dim..(i + 1) * dim], d.row(i), &t.x, 2.0 * w / n);
    }
    out.loss = total / n;
    backprop(model, &cache, up, dim, &mut out.grad)?;
    Ok(out)
}

/// `mean w(sigma) (|x - D(x_t; sigma, c)|^2 - |x - D(x_t; sigma, c~)|^2)`.
pub fn mclr_loss(model: &DenoiserModel, tuples: &[ContrastiveTuple], schedule: &NoiseSchedule) -> Result<LossValue> {
    let mut out = LossValue::zero(model);
    if tuples.is_empty() {
        return Ok(out);
    }
    let dim = model.architecture().data_dim;
    let n = tuples.len();
    let mut rows = Rows::new(dim);
    for t in tuples {
        rows.push(&t.x, &t.eps, t.sigma, Some(t.c))?;
    }
    for t in tuples {
        rows.push(&t.x, &t.eps, t.sigma, Some(t.c_tilde))?;
    }
    let (d, cache) = rows.forward_cached(model)?;
    let nf = n as f64;
    let mut up = vec![0.0; 2 * n * dim];
    let mut total = 0.0;
    for (i, t) in tuples.iter().enumerate() {
        let w = schedule.weight(t.sigma);
        let (dc, dt) = (d.row(i), d.row(n + i));
        total += w * (sq_err(&t.x, dc) - sq_err(&t.x, dt));
        residual_into(&mut up[i * dim..(i + 1) * dim], dc, &t.x, 2.0 * w / nf);
        residual_into(&mut up[(n + i) * dim..(n + i + 1) * dim], dt, &t.x, -2.0 * w / nf);
    }
    out.loss = total / nf;
    backprop(model, &cache, up, dim, &mut out.grad)?;
    Ok(out)
}

/// Denoiser outputs of the trainable and frozen models for winners (first
/// half of the rows) and losers (second half), all at the winner's class.
struct PreferencePass {
    d: Tensor,
    cache: ForwardCache,
    d_ref: Tensor,
    dim: usize,
}

fn preference_pass(
    model: &DenoiserModel,
    reference: &DenoiserModel,
    tuples: &[PreferenceTuple],
) -> Result<PreferencePass> {
    check_reference(model, reference)?;
    let dim = model.architecture().data_dim;
    let mut rows = Rows::new(dim);
    for t in tuples {
        rows.push(&t.x_w, &t.eps, t.sigma, Some(t.c))?;
    }
    for t in tuples {
        rows.push(&t.x_l, &t.eps, t.sigma, Some(t.c))?;
    }
    let (d, cache) = rows.forward_cached(model)?;
    // The reference is only ever evaluated, never differentiated.
    let d_ref = rows.forward(reference)?;
    Ok(PreferencePass { d, cache, d_ref, dim })
}

impl PreferencePass {
    /// `(Delta_w, Delta_l)` of tuple `i`.
    fn deltas(&self, t: &PreferenceTuple, i: usize, n: usize) -> (f64, f64) {
        let dw = sq_err(&t.x_w, self.d.row(i)) - sq_err(&t.x_w, self.d_ref.row(i));
        let dl = sq_err(&t.x_l, self.d.row(n + i)) - sq_err(&t.x_l, self.d_ref.row(n + i));
        (dw, dl)
    }
}

/// `mean -log sigmoid(beta w(sigma) (Delta_l - Delta_w))` where
/// `Delta = |x - D_theta|^2 - |x - D_ref|^2` at the winner's class.
pub fn ccdpo_loss(
    model: &DenoiserModel,
    reference: &DenoiserModel,
    tuples: &[PreferenceTuple],
    schedule: &NoiseSchedule,
    beta: f64,
) -> Result<LossValue> {
    check_reference(model, reference)?;
    let mut out = LossValue::zero(model);
    if tuples.is_empty() {
        return Ok(out);
    }
    let p = preference_pass(model, reference, tuples)?;
    let (n, dim) = (tuples.len(), p.dim);
    let nf = n as f64;
    let mut up = vec![0.0; 2 * n * dim];
    let mut total = 0.0;
    for (i, t) in tuples.iter().enumerate() {
        let bw = beta * schedule.weight(t.sigma);
        let (dw, dl) = p.deltas(t, i, n);
        let z = bw * (dl - dw);
        total += softplus(-z);
        // dL/dz = -sigmoid(-z); dz/dDelta_w = -bw; dz/dDelta_l = bw
        let g = sigmoid(-z) / nf;
        residual_into(&mut up[i * dim..(i + 1) * dim], p.d.row(i), &t.x_w, 2.0 * g * bw);
        residual_into(&mut up[(n + i) * dim..(n + i + 1) * dim], p.d.row(n + i), &t.x_l, -2.0 * g * bw);
    }
    out.loss = total / nf;
    backprop(model, &p.cache, up, dim, &mut out.grad)?;
    Ok(out)
}

/// `mean -[log sigmoid(-beta w Delta_w) + lambda log sigmoid(beta w Delta_l)]`.
pub fn cca_loss(
    model: &DenoiserModel,
    reference: &DenoiserModel,
    tuples: &[PreferenceTuple],
    schedule: &NoiseSchedule,
    beta: f64,
    lambda: f64,
) -> Result<LossValue> {
    check_reference(model, reference)?;
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be non-negative")));
    }
    let mut out = LossValue::zero(model);
    if tuples.is_empty() {
        return Ok(out);
    }
    let p = preference_pass(model, reference, tuples)?;
    let (n, dim) = (tuples.len(), p.dim);
    let nf = n as f64;
    let mut up = vec![0.0; 2 * n * dim];
    let mut total = 0.0;
    for (i, t) in tuples.iter().enumerate() {
        let bw = beta * schedule.weight(t.sigma);
        let (dw, dl) = p.deltas(t, i, n);
        let mut li = softplus(bw * dw);
        let gw = bw * sigmoid(bw * dw) / nf;
        residual_into(&mut up[i * dim..(i + 1) * dim], p.d.row(i), &t.x_w, 2.0 * gw);
        if lambda != 0.0 {
            li += lambda * softplus(-bw * dl);
            let gl = -lambda * bw * sigmoid(-bw * dl) / nf;
            residual_into(&mut up[(n + i) * dim..(n + i + 1) * dim], p.d.row(n + i), &t.x_l, 2.0 * gl);
        }
        total += li;
    }
    out.loss = total / nf;
    backprop(model, &p.cache, up, dim, &mut out.grad)?;
    Ok(out)
}

/// `beta_dsm * dsm_loss + mclr_loss`; the denoising terms should carry no
/// label dropout.
pub fn dsm_plus_mclr_loss(
    model: &DenoiserModel,
    terms: &[DenoisingTerm],
    tuples: &[ContrastiveTuple],
    schedule: &NoiseSchedule,
    beta_dsm: f64,
) -> Result<LossValue> {
    if !(beta_dsm >= 0.0) {
        return Err(invalid(format!("beta_dsm = {beta_dsm} must be non-negative")));
    }
    let dsm = dsm_loss(model, terms, schedule)?;
    let mut out = mclr_loss(model, tuples, schedule)?;
    out.loss += beta_dsm * dsm.loss;
    for (g, d) in out.grad.iter_mut().zip(&dsm.grad) {
        *g += beta_dsm * d;
    }
    Ok(out)
}
