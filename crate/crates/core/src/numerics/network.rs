//! Small feedforward denoiser `D(x_t; sigma, c)`.
//!
//! The input block concatenates the (optionally scaled) noisy coordinates,
//! [`FOURIER_PAIRS`] cosine/sine pairs of `c_noise = ln(sigma) / 4`, and a
//! learned class embedding. Row `num_classes` of the embedding table is the
//! null class used for the unconditional channel. Hidden layers use SiLU; the
//! head is linear.
//!
//! Parameters live in one flat buffer, in this order:
//!
//! 1. class embedding table, `(num_classes + 1) x embed_dim`, row-major;
//! 2. for every layer (hidden layers first, then the head): the weight
//!    matrix `fan_in x fan_out` row-major, followed by the bias `fan_out`.
//!
//! The same order is used by checkpoints.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Number of (cos, sin) Fourier feature pairs of the noise level.
pub const FOURIER_PAIRS: usize = 8;

/// Angular frequency of the lowest Fourier feature; each next pair doubles it.
const FOURIER_BASE_FREQ: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub data_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden_layers: 3,
            width: 128,
            num_classes: 2,
            embed_dim: 16,
        }
    }
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.data_dim + 2 * FOURIER_PAIRS + self.embed_dim
    }

    /// `(fan_in, fan_out)` of each layer, head last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim();
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.width));
            fan_in = self.width;
        }
        dims.push((fan_in, self.data_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        (self.num_classes + 1) * self.embed_dim
            + self
                .layer_dims()
                .iter()
                .map(|(i, o)| i * o + o)
                .sum::<usize>()
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.width == 0 || self.num_classes == 0 || self.embed_dim == 0 {
            return Err(invalid(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// Input/output scaling around the raw network `F`.
///
/// `Identity` returns `F` itself. `Edm` uses the skip/out/in scalings
/// `D = c_skip x + c_out F(c_in x)` with
/// `c_skip = sd^2 / (s^2 + sd^2)`, `c_out = s sd / sqrt(s^2 + sd^2)`,
/// `c_in = 1 / sqrt(s^2 + sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preconditioning {
    Identity,
    Edm { sigma_data: f64 },
}

impl Preconditioning {
    /// `(c_skip, c_out, c_in)` at noise level `sigma`.
    pub fn coefficients(&self, sigma: f64) -> (f64, f64, f64) {
        match *self {
            Preconditioning::Identity => (0.0, 1.0, 1.0),
            Preconditioning::Edm { sigma_data } => {
                let s2 = sigma * sigma;
                let d2 = sigma_data * sigma_data;
                let norm = (s2 + d2).sqrt();
                (d2 / (s2 + d2), sigma * sigma_data / norm, 1.0 / norm)
            }
        }
    }

    /// Stored in checkpoint headers; zero encodes `Identity`.
    pub fn sigma_data(&self) -> f64 {
        match *self {
            Preconditioning::Identity => 0.0,
            Preconditioning::Edm { sigma_data } => sigma_data,
        }
    }

    pub fn from_sigma_data(sigma_data: f64) -> Self {
        if sigma_data > 0.0 {
            Preconditioning::Edm { sigma_data }
        } else {
            Preconditioning::Identity
        }
    }
}

/// Writes the `2 * FOURIER_PAIRS` noise features into `out`.
pub fn noise_features(sigma: f64, out: &mut [f64]) {
    let c_noise = sigma.ln() / 4.0;
    let mut freq = FOURIER_BASE_FREQ;
    for k in 0..FOURIER_PAIRS {
        let a = freq * c_noise;
        out[2 * k] = a.cos();
        out[2 * k + 1] = a.sin();
        freq *= 2.0;
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s + z * s * (1.0 - s)
}

/// Rows processed together so each weight row is loaded once per block.
/// Every output element still accumulates over the input index in order,
/// so results do not depend on the block size.
const ROW_BLOCK: usize = 4;

/// `out[r, :] = bias + inp[r, :] @ w` for a row-major `fan_in x fan_out` weight.
fn affine(inp: &[f64], rows: usize, fan_in: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let fan_out = b.len();
    let mut r0 = 0;
    while r0 + ROW_BLOCK <= rows {
        let block = &mut out[r0 * fan_out..(r0 + ROW_BLOCK) * fan_out];
        let (o0, rest) = block.split_at_mut(fan_out);
        let (o1, rest) = rest.split_at_mut(fan_out);
        let (o2, o3) = rest.split_at_mut(fan_out);
        for o in [&mut *o0, &mut *o1, &mut *o2, &mut *o3] {
            o.copy_from_slice(b);
        }
        for i in 0..fan_in {
            let a0 = inp[r0 * fan_in + i];
            let a1 = inp[(r0 + 1) * fan_in + i];
            let a2 = inp[(r0 + 2) * fan_in + i];
            let a3 = inp[(r0 + 3) * fan_in + i];
            let wi = &w[i * fan_out..(i + 1) * fan_out];
            for j in 0..fan_out {
                let wij = wi[j];
                o0[j] += a0 * wij;
                o1[j] += a1 * wij;
                o2[j] += a2 * wij;
                o3[j] += a3 * wij;
            }
        }
        r0 += ROW_BLOCK;
    }
    for r in r0..rows {
        let x = &inp[r * fan_in..(r + 1) * fan_in];
        let o = &mut out[r * fan_out..(r + 1) * fan_out];
        o.copy_from_slice(b);
        for (i, &a) in x.iter().enumerate() {
            let wi = &w[i * fan_out..(i + 1) * fan_out];
            for (oj, &wij) in o.iter_mut().zip(wi) {
                *oj += a * wij;
            }
        }
    }
}

/// `gw += inp^T @ delta`, `gb += column sums of delta`, accumulating rows
/// in order.
fn accumulate_affine_grad(
    inp: &[f64],
    delta: &[f64],
    rows: usize,
    fan_in: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let fan_out = gb.len();
    for r in 0..rows {
        for (g, &v) in gb.iter_mut().zip(&delta[r * fan_out..(r + 1) * fan_out]) {
            *g += v;
        }
    }
    let mut r0 = 0;
    while r0 + ROW_BLOCK <= rows {
        let d0 = &delta[r0 * fan_out..(r0 + 1) * fan_out];
        let d1 = &delta[(r0 + 1) * fan_out..(r0 + 2) * fan_out];
        let d2 = &delta[(r0 + 2) * fan_out..(r0 + 3) * fan_out];
        let d3 = &delta[(r0 + 3) * fan_out..(r0 + 4) * fan_out];
        for i in 0..fan_in {
            let a0 = inp[r0 * fan_in + i];
            let a1 = inp[(r0 + 1) * fan_in + i];
            let a2 = inp[(r0 + 2) * fan_in + i];
            let a3 = inp[(r0 + 3) * fan_in + i];
            let gi = &mut gw[i * fan_out..(i + 1) * fan_out];
            for j in 0..fan_out {
                let mut g = gi[j];
                g += a0 * d0[j];
                g += a1 * d1[j];
                g += a2 * d2[j];
                g += a3 * d3[j];
                gi[j] = g;
            }
        }
        r0 += ROW_BLOCK;
    }
    for r in r0..rows {
        let dr = &delta[r * fan_out..(r + 1) * fan_out];
        for i in 0..fan_in {
            let a = inp[r * fan_in + i];
            let gi = &mut gw[i * fan_out..(i + 1) * fan_out];
            for (g, &v) in gi.iter_mut().zip(dr) {
                *g += a * v;
            }
        }
    }
}

fn transpose(w: &[f64], fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for i in 0..fan_in {
        for j in 0..fan_out {
            t[j * fan_in + i] = w[i * fan_out + j];
        }
    }
    t
}

/// Parameter offsets inside the flat buffer.
#[derive(Debug, Clone)]
struct Layout {
    embed_rows: usize,
    embed_dim: usize,
    /// `(weight_offset, bias_offset, fan_in, fan_out)` per layer.
    layers: Vec<(usize, usize, usize, usize)>,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let embed_rows = arch.num_classes + 1;
        let mut off = embed_rows * arch.embed_dim;
        let mut layers = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let w = off;
            let b = w + fan_in * fan_out;
            off = b + fan_out;
            layers.push((w, b, fan_in, fan_out));
        }
        Self {
            embed_rows,
            embed_dim: arch.embed_dim,
            layers,
        }
    }
}

/// Intermediate values kept by [`DenoiserModel::forward_cached`] for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    inputs: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    c_skip: Vec<f64>,
    c_out: Vec<f64>,
    c_in: Vec<f64>,
    embed_row: Vec<usize>,
}

/// Parameter and input gradients from [`DenoiserModel::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    arch: Architecture,
    precond: Preconditioning,
    params: Vec<f64>,
    layout_total: usize,
}

impl DenoiserModel {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture, precond: Preconditioning) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(Self {
            arch,
            precond,
            params: vec![0.0; n],
            layout_total: n,
        })
    }

    /// He (fan-in) initialisation for weights, zero biases, unit-normal
    /// embeddings.
    pub fn init(arch: Architecture, precond: Preconditioning, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(arch, precond)?;
        let layout = Layout::new(&arch);
        let embed_len = layout.embed_rows * layout.embed_dim;
        for p in &mut m.params[..embed_len] {
            *p = rng.normal();
        }
        for &(w, _, fan_in, fan_out) in &layout.layers {
            let scale = (2.0 / fan_in as f64).sqrt();
            for p in &mut m.params[w..w + fan_in * fan_out] {
                *p = scale * rng.normal();
            }
        }
        Ok(m)
    }

    pub fn from_params(
        arch: Architecture,
        precond: Preconditioning,
        params: Vec<f64>,
    ) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        if params.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                actual: vec![params.len()],
            });
        }
        Ok(Self {
            arch,
            precond,
            params,
            layout_total: n,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn preconditioning(&self) -> Preconditioning {
        self.precond
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout_total
    }

    /// Range of the flat buffer holding the embedding row of `class`
    /// (`None` is the null class).
    pub fn embedding_range(&self, class: Option<usize>) -> std::ops::Range<usize> {
        let row = class.unwrap_or(self.arch.num_classes);
        let e = self.arch.embed_dim;
        row * e..(row + 1) * e
    }

    /// Range of the head bias.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let layout = Layout::new(&self.arch);
        let &(_, b, _, fan_out) = layout.layers.last().expect("head layer");
        b..b + fan_out
    }

    fn check_inputs(&self, x_t: &Tensor, sigma: &[f64], class: &[Option<usize>]) -> Result<usize> {
        let n = x_t.rows();
        if x_t.shape().len() != 2 || x_t.cols() != self.arch.data_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.arch.data_dim],
                actual: x_t.shape().to_vec(),
            });
        }
        if sigma.len() != n || class.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                actual: vec![sigma.len(), class.len()],
            });
        }
        if let Some(&s) = sigma.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::NonPositiveSigma(s));
        }
        if let Some(c) = class.iter().flatten().find(|&&c| c >= self.arch.num_classes) {
            return Err(Error::OutOfRange {
                index: *c,
                len: self.arch.num_classes,
            });
        }
        Ok(n)
    }

    /// Denoised prediction for a batch of rows.
    pub fn forward(&self, x_t: &Tensor, sigma: &[f64], class: &[Option<usize>]) -> Result<Tensor> {
        Ok(self.forward_cached(x_t, sigma, class)?.0)
    }

    pub fn forward_cached(
        &self,
        x_t: &Tensor,
        sigma: &[f64],
        class: &[Option<usize>],
    ) -> Result<(Tensor, ForwardCache)> {
        let n = self.check_inputs(x_t, sigma, class)?;
        let layout = Layout::new(&self.arch);
        let d = self.arch.data_dim;
        let e = self.arch.embed_dim;
        let in_dim = self.arch.input_dim();

        let mut c_skip = Vec::with_capacity(n);
        let mut c_out = Vec::with_capacity(n);
        let mut c_in = Vec::with_capacity(n);
        let mut embed_row = Vec::with_capacity(n);
        let mut inputs = vec![0.0; n * in_dim];
        for r in 0..n {
            let (cs, co, ci) = self.precond.coefficients(sigma[r]);
            c_skip.push(cs);
            c_out.push(co);
            c_in.push(ci);
            let row = &mut inputs[r * in_dim..(r + 1) * in_dim];
            for (dst, &x) in row[..d].iter_mut().zip(x_t.row(r)) {
                *dst = ci * x;
            }
            noise_features(sigma[r], &mut row[d..d + 2 * FOURIER_PAIRS]);
            let er = class[r].unwrap_or(self.arch.num_classes);
            embed_row.push(er);
            row[d + 2 * FOURIER_PAIRS..].copy_from_slice(&self.params[er * e..(er + 1) * e]);
        }

        let mut pre = Vec::with_capacity(self.arch.hidden_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.arch.hidden_layers);
        let hidden = &layout.layers[..layout.layers.len() - 1];
        for &(w, b, fan_in, fan_out) in hidden {
            let src = post.last().unwrap_or(&inputs);
            let mut z = vec![0.0; n * fan_out];
            affine(
                src,
                n,
                fan_in,
                &self.params[w..w + fan_in * fan_out],
                &self.params[b..b + fan_out],
                &mut z,
            );
            let a: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let &(w, b, fan_in, fan_out) = layout.layers.last().expect("head layer");
        let mut raw = vec![0.0; n * fan_out];
        affine(
            post.last().unwrap_or(&inputs),
            n,
            fan_in,
            &self.params[w..w + fan_in * fan_out],
            &self.params[b..b + fan_out],
            &mut raw,
        );
        for r in 0..n {
            let xr = x_t.row(r);
            for j in 0..d {
                raw[r * d + j] = c_skip[r] * xr[j] + c_out[r] * raw[r * d + j];
            }
        }
        let out = Tensor::matrix(n, d, raw)?;
        let cache = ForwardCache {
            rows: n,
            inputs,
            pre,
            post,
            c_skip,
            c_out,
            c_in,
            embed_row,
        };
        Ok((out, cache))
    }

    /// Reverse-mode pass from a forward cache. Parameter gradients are
    /// *added* to `grad` (length [`param_count`](Self::param_count)); the
    /// gradient with respect to `x_t` is returned.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &Tensor,
        grad: &mut [f64],
    ) -> Result<Tensor> {
        let n = cache.rows;
        let d = self.arch.data_dim;
        let e = self.arch.embed_dim;
        upstream.ensure_shape(&[n, d])?;
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.params.len()],
                actual: vec![grad.len()],
            });
        }
        let layout = Layout::new(&self.arch);
        let in_dim = self.arch.input_dim();

        // dL/dF = c_out * upstream
        let mut delta: Vec<f64> = Vec::with_capacity(n * d);
        for r in 0..n {
            for &g in upstream.row(r) {
                delta.push(cache.c_out[r] * g);
            }
        }

        let nl = layout.layers.len();
        for li in (0..nl).rev() {
            let (w, b, fan_in, fan_out) = layout.layers[li];
            let src: &[f64] = if li == 0 {
                &cache.inputs
            } else {
                &cache.post[li - 1]
            };
            {
                let (gw, gb) = grad[w..b + fan_out].split_at_mut(fan_in * fan_out);
                accumulate_affine_grad(src, &delta, n, fan_in, gw, gb);
            }
            // Propagate to the layer input: delta_in = delta @ W^T.
            let wt = transpose(&self.params[w..w + fan_in * fan_out], fan_in, fan_out);
            let zero_bias = vec![0.0; fan_in];
            let mut din = vec![0.0; n * fan_in];
            affine(&delta, n, fan_out, &wt, &zero_bias, &mut din);
            if li > 0 {
                let z = &cache.pre[li - 1];
                for (v, &zz) in din.iter_mut().zip(z) {
                    *v *= silu_grad(zz);
                }
            }
            delta = din;
        }

        // delta now holds dL/d(input block).
        let mut dx = vec![0.0; n * d];
        let emb_off = d + 2 * FOURIER_PAIRS;
        for r in 0..n {
            let dr = &delta[r * in_dim..(r + 1) * in_dim];
            for j in 0..d {
                dx[r * d + j] = cache.c_in[r] * dr[j] + cache.c_skip[r] * upstream.row(r)[j];
            }
            let er = cache.embed_row[r];
            let ge = &mut grad[er * e..(er + 1) * e];
            for (g, &v) in ge.iter_mut().zip(&dr[emb_off..]) {
                *g += v;
            }
        }
        Tensor::matrix(n, d, dx)
    }

    /// Exact gradients of `sum(upstream * forward(x_t, sigma, class))`.
    pub fn backward(
        &self,
        x_t: &Tensor,
        sigma: &[f64],
        class: &[Option<usize>],
        upstream: &Tensor,
    ) -> Result<Gradients> {
        let (_, cache) = self.forward_cached(x_t, sigma, class)?;
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_cached(&cache, upstream, &mut params)?;
        Ok(Gradients { params, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture {
            data_dim: 2,
            hidden_layers: 2,
            width: 8,
            num_classes: 3,
            embed_dim: 4,
        }
    }

    fn batch(rng: &mut Rng, n: usize) -> (Tensor, Vec<f64>, Vec<Option<usize>>) {
        let x = Tensor::matrix(n, 2, rng.normals(2 * n)).unwrap();
        let s = (0..n).map(|_| 0.05 + 3.0 * rng.uniform()).collect();
        let c = (0..n)
            .map(|i| if i % 4 == 3 { None } else { Some(i % 3) })
            .collect();
        (x, s, c)
    }

    /// Straight-line re-evaluation of the layer equations for one row.
    fn reference_row(m: &DenoiserModel, x: &[f64], sigma: f64, class: Option<usize>) -> Vec<f64> {
        let arch = *m.architecture();
        let p = m.params();
        let (cs, co, ci) = m.preconditioning().coefficients(sigma);
        let mut h: Vec<f64> = x.iter().map(|v| ci * v).collect();
        let c_noise = sigma.ln() / 4.0;
        for k in 0..FOURIER_PAIRS {
            let a = 0.25 * 2f64.powi(k as i32) * c_noise;
            h.push(a.cos());
            h.push(a.sin());
        }
        let row = class.unwrap_or(arch.num_classes);
        h.extend_from_slice(&p[row * arch.embed_dim..(row + 1) * arch.embed_dim]);
        let mut off = (arch.num_classes + 1) * arch.embed_dim;
        let dims = arch.layer_dims();
        for (li, &(fi, fo)) in dims.iter().enumerate() {
            let mut z = vec![0.0; fo];
            for j in 0..fo {
                let mut acc = p[off + fi * fo + j];
                for i in 0..fi {
                    acc += h[i] * p[off + i * fo + j];
                }
                z[j] = acc;
            }
            off += fi * fo + fo;
            h = if li + 1 < dims.len() {
                z.iter().map(|&v| v / (1.0 + (-v).exp())).collect()
            } else {
                z
            };
        }
        h.iter().zip(x).map(|(f, xv)| cs * xv + co * f).collect()
    }

    #[test]
    fn param_count_is_pure_function_of_arch() {
        let a = Architecture::default();
        // embed 3x16, 34->128, 128->128 (x2), 128->2
        let expected = 3 * 16 + (34 * 128 + 128) + 2 * (128 * 128 + 128) + (128 * 2 + 2);
        assert_eq!(a.param_count(), expected);
        let m = DenoiserModel::zeros(a, Preconditioning::Identity).unwrap();
        assert_eq!(m.param_count(), expected);
    }

    #[test]
    fn zero_model_outputs_head_bias() {
        let mut m = DenoiserModel::zeros(small_arch(), Preconditioning::Identity).unwrap();
        let bias = m.output_bias_range();
        m.params_mut()[bias.clone()].copy_from_slice(&[0.3, -1.25]);
        let mut rng = Rng::new(1);
        let (x, s, c) = batch(&mut rng, 9);
        let out = m.forward(&x, &s, &c).unwrap();
        for r in out.iter_rows() {
            assert_eq!(r, &[0.3, -1.25]);
        }
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let mut rng = Rng::new(2);
        let m = DenoiserModel::init(small_arch(), Preconditioning::Edm { sigma_data: 1.0 }, &mut rng)
            .unwrap();
        let x = Tensor::from_rows(&[vec![0.4, -0.7], vec![0.4, -0.7]]).unwrap();
        let out = m.forward(&x, &[0.9, 0.9], &[Some(1), Some(1)]).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        for precond in [Preconditioning::Identity, Preconditioning::Edm { sigma_data: 0.8 }] {
            let mut rng = Rng::new(3);
            let m = DenoiserModel::init(small_arch(), precond, &mut rng).unwrap();
            let (x, s, c) = batch(&mut rng, 12);
            let out = m.forward(&x, &s, &c).unwrap();
            for r in 0..12 {
                let want = reference_row(&m, x.row(r), s[r], c[r]);
                for (a, b) in out.row(r).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = DenoiserModel::zeros(small_arch(), Preconditioning::Identity).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            m.forward(&x, &[0.0], &[Some(0)]),
            Err(Error::NonPositiveSigma(_))
        ));
        assert!(m.forward(&x, &[1.0], &[Some(3)]).is_err());
        let bad = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            m.forward(&bad, &[1.0], &[Some(0)]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = Rng::new(4);
        let m = DenoiserModel::init(small_arch(), Preconditioning::Identity, &mut rng).unwrap();
        let (x, s, c) = batch(&mut rng, 5);
        let g = m.backward(&x, &s, &c, &Tensor::zeros(vec![5, 2])).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_bias_gradient_is_column_sum() {
        let mut rng = Rng::new(5);
        let m = DenoiserModel::init(small_arch(), Preconditioning::Identity, &mut rng).unwrap();
        let (x, s, c) = batch(&mut rng, 7);
        let up = Tensor::matrix(7, 2, rng.normals(14)).unwrap();
        let g = m.backward(&x, &s, &c, &up).unwrap();
        let bias = m.output_bias_range();
        for j in 0..2 {
            let col: f64 = (0..7).map(|r| up.row(r)[j]).sum();
            assert!((g.params[bias.start + j] - col).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        for precond in [Preconditioning::Identity, Preconditioning::Edm { sigma_data: 1.3 }] {
            let mut rng = Rng::new(6);
            let mut m = DenoiserModel::init(small_arch(), precond, &mut rng).unwrap();
            let (x, s, c) = batch(&mut rng, 6);
            let up = Tensor::matrix(6, 2, rng.normals(12)).unwrap();
            let loss = |m: &DenoiserModel| -> f64 {
                let out = m.forward(&x, &s, &c).unwrap();
                out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let g = m.backward(&x, &s, &c, &up).unwrap();
            let h = 1e-5;
            for k in 0..m.param_count() {
                let orig = m.params()[k];
                m.params_mut()[k] = orig + h;
                let lp = loss(&m);
                m.params_mut()[k] = orig - h;
                let lm = loss(&m);
                m.params_mut()[k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(g.params[k].abs()).max(1e-6);
                assert!(
                    (fd - g.params[k]).abs() / denom < 1e-4,
                    "param {k}: fd {fd} analytic {}",
                    g.params[k]
                );
            }
            // input gradient
            let mut xp = x.clone();
            for k in 0..xp.len() {
                let orig = xp.data()[k];
                xp.data_mut()[k] = orig + h;
                let lp: f64 = m.forward(&xp, &s, &c).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
                xp.data_mut()[k] = orig - h;
                let lm: f64 = m.forward(&xp, &s, &c).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
                xp.data_mut()[k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g.input.data()[k]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn forward_backward_bit_deterministic() {
        let mut rng = Rng::new(8);
        let m = DenoiserModel::init(small_arch(), Preconditioning::Edm { sigma_data: 0.5 }, &mut rng)
            .unwrap();
        let (x, s, c) = batch(&mut rng, 10);
        let up = Tensor::matrix(10, 2, rng.normals(20)).unwrap();
        let a = m.backward(&x, &s, &c, &up).unwrap();
        let b = m.backward(&x, &s, &c, &up).unwrap();
        assert!(a.params.iter().zip(&b.params).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
