use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use guidefree::diffusion::{initial_latents, sample_ode_from, DenoiserScore, GuidanceSpec, NoiseSchedule};
use guidefree::numerics::{Checkpoint, DenoiserModel, Rng, Tensor};
use serde::Serialize;

use crate::plot::sample_scatter;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    pub checkpoint: PathBuf,
    /// `None` samples every class.
    pub class: Option<usize>,
    pub n: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Reuse one set of latents for every class.
    pub shared_noise: bool,
    pub steps: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSamples {
    pub class: usize,
    /// Initial states at `sigma_max`.
    pub latents: Tensor,
    pub samples: Tensor,
}

#[derive(Serialize)]
struct Row {
    x1: f64,
    x2: f64,
    class: usize,
    z1: f64,
    z2: f64,
}

/// Integrates `n` latents per class under CFG strength `gamma`. Class `c`
/// draws its latents from `Rng::new(seed).fork(c)`, or from `fork(0)` for
/// every class with `shared_noise`.
pub fn draw_samples(
    model: &DenoiserModel,
    classes: &[usize],
    n: usize,
    gamma: f64,
    seed: u64,
    shared_noise: bool,
    steps: usize,
) -> Result<Vec<ClassSamples>> {
    let k = model.architecture().num_classes;
    if let Some(&c) = classes.iter().find(|&&c| c >= k) {
        bail!("class {c} out of range: the model has {k} classes");
    }
    if n == 0 {
        bail!("need at least one sample");
    }
    let schedule = NoiseSchedule::default().with_steps(steps);
    let guidance = GuidanceSpec::cfg(gamma);
    let base = Rng::new(seed);
    let dim = model.architecture().data_dim;
    classes
        .iter()
        .map(|&c| {
            let tag = if shared_noise { 0 } else { c as u64 };
            let latents = initial_latents(&schedule, dim, n, &mut base.fork(tag))?;
            let samples = sample_ode_from(&DenoiserScore { model }, &schedule, &guidance, c, latents.clone())?;
            Ok(ClassSamples {
                class: c,
                latents,
                samples,
            })
        })
        .collect()
}

pub fn write_samples_csv(path: &Path, s: &ClassSamples) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (x, z) in s.samples.iter_rows().zip(s.latents.iter_rows()) {
        w.serialize(Row {
            x1: x[0],
            x2: x[1],
            class: s.class,
            z1: z[0],
            z2: z[1],
        })?;
    }
    w.flush()?;
    Ok(())
}

/// `sample` subcommand: `samples_class{c}.csv` per class and
/// `samples.svg` in `req.out`. Returns the paths written.
pub fn sample_checkpoint(req: &SampleRequest) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(&req.checkpoint).with_context(|| format!("loading {}", req.checkpoint.display()))?;
    let classes: Vec<usize> = match req.class {
        Some(c) => vec![c],
        None => (0..ck.model.architecture().num_classes).collect(),
    };
    let drawn = draw_samples(&ck.model, &classes, req.n, req.gamma, req.seed, req.shared_noise, req.steps)?;
    fs::create_dir_all(&req.out).with_context(|| format!("creating {}", req.out.display()))?;
    let mut written = Vec::new();
    for s in &drawn {
        let p = req.out.join(format!("samples_class{}.csv", s.class));
        write_samples_csv(&p, s)?;
        written.push(p);
    }
    let groups: Vec<(usize, &Tensor)> = drawn.iter().map(|s| (s.class, &s.samples)).collect();
    let svg = req.out.join("samples.svg");
    fs::write(&svg, sample_scatter(&format!("samples, gamma = {}", req.gamma), &groups))?;
    written.push(svg);
    Ok(written)
}

/// Mean distance between paired rows of two equally sized sample sets.
pub fn mean_pair_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rows() != b.rows() || a.rows() == 0 {
        bail!("pair distance needs equal, non-empty sample sets");
    }
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .sum();
    Ok(total / a.rows() as f64)
}
