use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use guidefree::diffusion::GuidanceSpec;
use guidefree::metrics::{evaluate, EvalSpec, MetricRecord};
use guidefree::numerics::DenoiserModel;
use guidefree::worlds::GaussianMixtureWorld;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{train_run, RunManifest};
use crate::svg::{Chart, Style};

pub const DEFAULT_GAMMAS: [f64; 11] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9, 1.0, 1.5, 2.0, 3.0];
pub const THREADS_ENV: &str = "GUIDEFREE_THREADS";

/// Worker count: `GUIDEFREE_THREADS` when set to a positive integer, else
/// the available parallelism.
pub fn thread_limit() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Order-preserving parallel map over at most `threads` workers.
pub fn parallel_map<T, R, F>(items: Vec<T>, threads: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = items.len();
    let slots: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let item = slots[i].lock().unwrap().take().expect("each item taken once");
                *results[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every item processed"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub fd: f64,
    pub bayes_acc: f64,
    pub mean_llr: f64,
    pub recall_proxy: f64,
}

impl GammaPoint {
    fn new(gamma: f64, r: &MetricRecord) -> Self {
        Self {
            gamma,
            fd: r.fd,
            bayes_acc: r.bayes_acc,
            mean_llr: r.mean_llr,
            recall_proxy: r.recall_proxy,
        }
    }
}

/// Metrics of one model under CFG at each strength. Every strength reuses
/// `spec.seed`, so the points differ only through guidance.
pub fn gamma_sweep(
    model: &DenoiserModel,
    world: &GaussianMixtureWorld,
    spec: &EvalSpec,
    gammas: &[f64],
    threads: usize,
) -> Result<Vec<GammaPoint>> {
    let out = parallel_map(gammas.to_vec(), threads, |gamma| {
        let s = EvalSpec {
            guidance: GuidanceSpec::cfg(gamma),
            ..*spec
        };
        evaluate(model, world, &s, 0, None).map(|r| GammaPoint::new(gamma, &r))
    });
    Ok(out.into_iter().collect::<guidefree::Result<Vec<_>>>()?)
}

/// Writes `sweep.csv` and `sweep_tradeoff.svg` into `out`.
pub fn write_gamma_sweep(points: &[GammaPoint], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    let mut chart = Chart::new("CFG strength sweep", "Bayes accuracy", "Frechet distance");
    chart.add("cfg", points.iter().map(|p| (p.bayes_acc, p.fd)).collect(), Style::LineMarkers);
    let svg = out.join("sweep_tradeoff.svg");
    fs::write(&svg, chart.render())?;
    Ok(vec![csv_path, svg])
}

/// Trains independent configs concurrently, each single-threaded.
pub fn sweep_configs(runs: Vec<(ExperimentConfig, PathBuf)>, threads: usize) -> Vec<Result<RunManifest>> {
    parallel_map(runs, threads, |(cfg, out)| train_run(&cfg, &out))
}
