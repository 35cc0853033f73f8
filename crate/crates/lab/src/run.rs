use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use guidefree::metrics::{evaluate, MetricRecord};
use guidefree::numerics::{Checkpoint, DenoiserModel, Rng};
use guidefree::objectives::train;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, ExperimentConfig};
use crate::plot;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_DIR: &str = "reports";
pub const PLOT_DIR: &str = "plots";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the run directory for run outputs; as configured for
    /// inputs.
    pub path: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

impl ArtifactRef {
    fn of_file(path: &Path, shown: String, iteration: Option<usize>) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: shown,
            sha256: sha256_hex(&bytes),
            iteration,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<ArtifactRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_checkpoint: Option<ArtifactRef>,
    pub checkpoints: Vec<ArtifactRef>,
    pub final_checkpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_csv: Option<String>,
    pub reports: Vec<String>,
    pub plots: Vec<String>,
    /// The only field that differs between identical reruns.
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let p = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub iteration: usize,
    pub value: f64,
}

/// Per-metric best checkpoint. Ties keep the earliest iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestReport {
    pub fd: Best,
    pub bayes_acc: Best,
    pub mean_llr: Best,
    pub recall_proxy: Best,
}

impl BestReport {
    pub fn from_records(records: &[MetricRecord]) -> Option<Self> {
        let pick = |f: fn(&MetricRecord) -> f64, lower: bool| {
            let mut best: Option<Best> = None;
            for r in records {
                let v = f(r);
                let better = match best {
                    None => true,
                    Some(b) => (lower && v < b.value) || (!lower && v > b.value),
                };
                if better {
                    best = Some(Best {
                        iteration: r.iteration,
                        value: v,
                    });
                }
            }
            best
        };
        Some(Self {
            fd: pick(|r| r.fd, true)?,
            bayes_acc: pick(|r| r.bayes_acc, false)?,
            mean_llr: pick(|r| r.mean_llr, false)?,
            recall_proxy: pick(|r| r.recall_proxy, false)?,
        })
    }
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration:06}.gfck")
}

pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["iteration", "loss", "fd", "bayes_acc", "mean_llr", "recall_proxy"])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metric log; an absent, unreadable or empty file is an error
/// naming the file.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("missing metrics file {}", path.display()))?;
    let rows: Vec<MetricRecord> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("malformed metrics file {}", path.display()))?;
    if rows.is_empty() {
        bail!("metrics file {} has no rows", path.display());
    }
    Ok(rows)
}

fn load_checkpoint(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("loading {what} {}", path.display()))
}

fn fresh_dir(p: &Path) -> Result<()> {
    if p.exists() {
        fs::remove_dir_all(p).with_context(|| format!("clearing {}", p.display()))?;
    }
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Trains `config` into `out`: config.json, checkpoints/, metrics.csv,
/// reports/best.json, plots/ and manifest.json. Existing outputs of an
/// earlier run in `out` are replaced.
pub fn train_run(config: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ck_dir = out.join(CHECKPOINT_DIR);
    for d in [&ck_dir, &out.join(REPORT_DIR), &out.join(PLOT_DIR)] {
        fresh_dir(d)?;
    }
    for f in [MANIFEST, METRICS_CSV] {
        let _ = fs::remove_file(out.join(f));
    }
    let mut stored = config.clone();
    stored.out = None;
    write_json(&out.join("config.json"), &stored)?;

    let seed = config.seed;
    let init_ref = match &config.init_checkpoint {
        Some(p) => Some((load_checkpoint(p, "init checkpoint")?, p)),
        None => None,
    };
    let model = match &init_ref {
        Some((ck, _)) => ck.model.clone(),
        None => DenoiserModel::init(config.architecture, config.preconditioning(), &mut Rng::new(seed).fork(0))?,
    };
    if model.architecture().num_classes != config.world.num_classes() {
        bail!(
            "model has {} classes, world has {}",
            model.architecture().num_classes,
            config.world.num_classes()
        );
    }
    let reference = match &config.reference_checkpoint {
        Some(p) => Some((load_checkpoint(p, "reference checkpoint")?, p)),
        None => None,
    };

    let schedule = config.training_schedule();
    let eval = config.eval_spec();
    let metric_every = config.metric_every();
    let iterations = config.train.iterations;
    let csv_path = out.join(METRICS_CSV);
    let mut records: Vec<MetricRecord> = Vec::new();
    let mut checkpoints = Vec::new();
    let mut observer = |it: usize, m: &DenoiserModel, loss: Option<f64>| -> guidefree::Result<()> {
        let name = checkpoint_name(it);
        let ck = Checkpoint {
            model: m.clone(),
            iteration: it as u64,
            seed,
        };
        ck.save(&ck_dir.join(&name))?;
        checkpoints.push((name, it));
        if config.eval.enabled && (it % metric_every == 0 || it == iterations) {
            records.push(evaluate(m, &config.world, &eval, it, loss)?);
        }
        Ok(())
    };
    let trained = train(
        &config.train,
        &config.world,
        &schedule,
        model,
        reference.as_ref().map(|(ck, _)| &ck.model),
        &mut Rng::new(seed).fork(1),
        &mut observer,
    );
    // Metrics up to a divergence are kept.
    if config.eval.enabled {
        write_metrics_csv(&csv_path, &records)?;
    }
    trained.with_context(|| format!("training {}", config.display_name()))?;

    let mut reports = Vec::new();
    let mut plots = Vec::new();
    let metrics_csv = if config.eval.enabled {
        if let Some(best) = BestReport::from_records(&records) {
            let rel = format!("{REPORT_DIR}/best.json");
            write_json(&out.join(&rel), &best)?;
            reports.push(rel);
        }
        let name = config.display_name();
        for f in plot::write_run_plots(&[(name, records.clone())], &out.join(PLOT_DIR))? {
            plots.push(format!("{PLOT_DIR}/{f}"));
        }
        Some(METRICS_CSV.to_string())
    } else {
        None
    };

    let mut refs = Vec::new();
    for (name, it) in &checkpoints {
        refs.push(ArtifactRef::of_file(
            &ck_dir.join(name),
            format!("{CHECKPOINT_DIR}/{name}"),
            Some(*it),
        )?);
    }
    let input = |r: &Option<(Checkpoint, &PathBuf)>| -> Result<Option<ArtifactRef>> {
        r.as_ref()
            .map(|(ck, p)| ArtifactRef::of_file(p, p.display().to_string(), Some(ck.iteration as usize)))
            .transpose()
    };
    let manifest = RunManifest {
        name: config.display_name(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed,
        init_checkpoint: input(&init_ref)?,
        reference_checkpoint: input(&reference)?,
        final_checkpoint: refs.last().map(|r| r.path.clone()).unwrap_or_default(),
        checkpoints: refs,
        metrics_csv,
        reports,
        plots,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iteration: usize, fd: f64, acc: f64) -> MetricRecord {
        MetricRecord {
            iteration,
            loss: if iteration == 0 { None } else { Some(0.5) },
            fd,
            bayes_acc: acc,
            mean_llr: 0.1,
            recall_proxy: 0.9,
        }
    }

    #[test]
    fn best_report_prefers_the_earliest_tie() {
        let rs = [rec(0, 0.3, 0.8), rec(10, 0.1, 0.9), rec(20, 0.1, 0.95)];
        let b = BestReport::from_records(&rs).unwrap();
        assert_eq!(b.fd.iteration, 10);
        assert_eq!(b.bayes_acc.iteration, 20);
        assert_eq!(b.mean_llr.iteration, 0);
        assert!(BestReport::from_records(&[]).is_none());
    }

    #[test]
    fn metrics_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rs = vec![rec(0, 0.3, 0.8), rec(10, 0.123456789012345, 1.0 / 3.0)];
        write_metrics_csv(&p, &rs).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iteration,loss,fd,bayes_acc,mean_llr,recall_proxy\n0,,"));
        assert_eq!(read_metrics_csv(&p).unwrap(), rs);
    }

    #[test]
    fn empty_csv_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        write_metrics_csv(&p, &[]).unwrap();
        let msg = format!("{:#}", read_metrics_csv(&p).unwrap_err());
        assert!(msg.contains("empty.csv"), "{msg}");
        let missing = dir.path().join("nope.csv");
        let msg = format!("{:#}", read_metrics_csv(&missing).unwrap_err());
        assert!(msg.contains("nope.csv"), "{msg}");
    }
}
