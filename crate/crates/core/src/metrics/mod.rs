//! Desk-scale sample-quality metrics on 2D data.

use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_ode_from, initial_latents, DenoiserScore, GuidanceSpec, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::numerics::{DenoiserModel, Rng, Tensor};
use crate::worlds::mat2::{self, Mat2};
use crate::worlds::{GaussianMixtureWorld, LabeledBatch};

/// Ridge added to a rank-deficient covariance.
pub const COV_RIDGE: f64 = 1e-8;

/// One row of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub loss: Option<f64>,
    pub fd: f64,
    pub bayes_acc: f64,
    pub mean_llr: f64,
    pub recall_proxy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frechet {
    pub distance: f64,
    /// Set when either covariance needed the ridge.
    pub regularized: bool,
}

fn moments(x: &Tensor) -> Result<([f64; 2], Mat2)> {
    if x.cols() != 2 || x.rows() < 2 {
        return Err(invalid("Frechet distance needs at least two 2D samples"));
    }
    let n = x.rows() as f64;
    let mut m = [0.0; 2];
    for r in x.iter_rows() {
        m[0] += r[0];
        m[1] += r[1];
    }
    m[0] /= n;
    m[1] /= n;
    let mut c = [[0.0; 2]; 2];
    for r in x.iter_rows() {
        let d = [r[0] - m[0], r[1] - m[1]];
        c[0][0] += d[0] * d[0];
        c[0][1] += d[0] * d[1];
        c[1][1] += d[1] * d[1];
    }
    c[0][0] /= n - 1.0;
    c[0][1] /= n - 1.0;
    c[1][1] /= n - 1.0;
    c[1][0] = c[0][1];
    Ok((m, c))
}

fn min_eigenvalue(c: &Mat2) -> f64 {
    let t = mat2::trace(c);
    let d = mat2::det(c);
    0.5 * (t - (t * t - 4.0 * d).max(0.0).sqrt())
}

fn regularize(c: Mat2) -> (Mat2, bool) {
    if min_eigenvalue(&c) <= 1e-12 * mat2::trace(&c).max(1e-300) {
        (mat2::add_iso(&c, COV_RIDGE), true)
    } else {
        (c, false)
    }
}

/// Frechet distance between moment-fitted Gaussians:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_gaussian(a: &Tensor, b: &Tensor) -> Result<Frechet> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    let (ca, ra) = regularize(ca);
    let (cb, rb) = regularize(cb);
    Ok(Frechet {
        distance: frechet_from_moments(ma, &ca, mb, &cb),
        regularized: ra || rb,
    })
}

pub fn frechet_from_moments(ma: [f64; 2], ca: &Mat2, mb: [f64; 2], cb: &Mat2) -> f64 {
    let ra = mat2::sqrt_psd(ca);
    let inner = mat2::mul(&mat2::mul(&ra, cb), &ra);
    let cross = mat2::trace(&mat2::sqrt_psd(&inner));
    let dm = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2);
    (dm + mat2::trace(ca) + mat2::trace(cb) - 2.0 * cross).max(0.0)
}

fn point(r: &[f64]) -> [f64; 2] {
    [r[0], r[1]]
}

/// Fraction of samples whose label equals the ground-truth Bayes class.
pub fn bayes_accuracy(world: &GaussianMixtureWorld, batch: &LabeledBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let hits = batch
        .x
        .iter_rows()
        .zip(&batch.labels)
        .filter(|(r, &c)| world.bayes_class(point(r)) == c)
        .count();
    hits as f64 / batch.len() as f64
}

/// Mean of `log p(x|c) - log p(x)` under the ground truth.
pub fn mean_llr(world: &GaussianMixtureWorld, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("mean_llr of an empty batch"));
    }
    let mut total = 0.0;
    for (r, &c) in batch.x.iter_rows().zip(&batch.labels) {
        let lc = world.log_cond_density(point(r), 0.0, c)?;
        let lm = world.log_marginal_density(point(r), 0.0)?;
        if lm == f64::NEG_INFINITY {
            return Err(Error::NonFinite("zero marginal density at a sample".into()));
        }
        total += lc - lm;
    }
    Ok(total / batch.len() as f64)
}

/// Fraction of the grid cells holding truth samples that also hold a
/// generated sample. The grid is `grid_cells x grid_cells` over the truth
/// bounding box scaled by 1.1 about its centre.
pub fn recall_proxy(truth: &Tensor, generated: &Tensor, grid_cells: usize) -> Result<f64> {
    if truth.rows() == 0 || truth.cols() != 2 || generated.cols() != 2 || grid_cells == 0 {
        return Err(invalid("recall_proxy needs non-empty 2D truth and a positive grid"));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for r in truth.iter_rows() {
        for j in 0..2 {
            lo[j] = lo[j].min(r[j]);
            hi[j] = hi[j].max(r[j]);
        }
    }
    for j in 0..2 {
        let half = 0.55 * (hi[j] - lo[j]).max(1e-12);
        let mid = 0.5 * (hi[j] + lo[j]);
        lo[j] = mid - half;
        hi[j] = mid + half;
    }
    let cell = |r: &[f64]| -> Option<usize> {
        let mut idx = [0usize; 2];
        for j in 0..2 {
            let u = (r[j] - lo[j]) / (hi[j] - lo[j]);
            if !(0.0..=1.0).contains(&u) {
                return None;
            }
            idx[j] = ((u * grid_cells as f64) as usize).min(grid_cells - 1);
        }
        Some(idx[0] * grid_cells + idx[1])
    };
    let mut occupied = vec![0u8; grid_cells * grid_cells];
    for r in truth.iter_rows() {
        if let Some(k) = cell(r) {
            occupied[k] |= 1;
        }
    }
    for r in generated.iter_rows() {
        if let Some(k) = cell(r) {
            occupied[k] |= 2;
        }
    }
    let truth_cells = occupied.iter().filter(|&&o| o & 1 != 0).count();
    let both = occupied.iter().filter(|&&o| o == 3).count();
    Ok(both as f64 / truth_cells as f64)
}

/// How a model snapshot is sampled and scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub samples_per_class: usize,
    pub schedule: NoiseSchedule,
    pub guidance: GuidanceSpec,
    pub grid_cells: usize,
    /// Seeds the latents and the ground-truth reference draws; fixed across
    /// checkpoints so successive evaluations share their random numbers.
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            samples_per_class: 4096,
            schedule: NoiseSchedule::default(),
            guidance: GuidanceSpec::none(),
            grid_cells: 32,
            seed: 0,
        }
    }
}

/// Generated samples for every class from one model snapshot.
pub fn generate_labeled(model: &DenoiserModel, world_classes: usize, spec: &EvalSpec) -> Result<LabeledBatch> {
    let base = Rng::new(spec.seed);
    let mut x: Option<Tensor> = None;
    let mut labels = Vec::new();
    for c in 0..world_classes {
        let mut rng = base.fork(2 * c as u64);
        let z = initial_latents(&spec.schedule, 2, spec.samples_per_class, &mut rng)?;
        let s = sample_ode_from(&DenoiserScore { model }, &spec.schedule, &spec.guidance, c, z)?;
        labels.extend(std::iter::repeat(c).take(s.rows()));
        x = Some(match x {
            None => s,
            Some(prev) => prev.vstack(&s)?,
        });
    }
    LabeledBatch::new(x.ok_or_else(|| invalid("world has no classes"))?, labels)
}

/// Class-conditional metrics of a labelled sample set. `fd` and
/// `recall_proxy` are computed per class against fresh ground-truth draws
/// and averaged with the class priors as weights.
pub fn score_samples(
    world: &GaussianMixtureWorld,
    generated: &LabeledBatch,
    spec: &EvalSpec,
    iteration: usize,
    loss: Option<f64>,
) -> Result<MetricRecord> {
    let base = Rng::new(spec.seed);
    let mut fd = 0.0;
    let mut recall = 0.0;
    for c in 0..world.num_classes() {
        let idx: Vec<usize> = (0..generated.len()).filter(|&i| generated.labels[i] == c).collect();
        let mut rng = base.fork(2 * c as u64 + 1);
        let truth = world.sample_class(c, spec.samples_per_class.max(2), &mut rng)?;
        let gen_c = generated.x.select_rows(&idx);
        fd += world.priors[c] * frechet_gaussian(&gen_c, &truth)?.distance;
        recall += world.priors[c] * recall_proxy(&truth, &gen_c, spec.grid_cells)?;
    }
    Ok(MetricRecord {
        iteration,
        loss,
        fd,
        bayes_acc: bayes_accuracy(world, generated),
        mean_llr: mean_llr(world, generated)?,
        recall_proxy: recall,
    })
}

pub fn evaluate(
    model: &DenoiserModel,
    world: &GaussianMixtureWorld,
    spec: &EvalSpec,
    iteration: usize,
    loss: Option<f64>,
) -> Result<MetricRecord> {
    let generated = generate_labeled(model, world.num_classes(), spec)?;
    score_samples(world, &generated, spec, iteration, loss)
}
