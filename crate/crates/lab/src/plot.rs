use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use guidefree::metrics::MetricRecord;
use guidefree::numerics::Tensor;

use crate::run::{read_metrics_csv, RunManifest, METRICS_CSV};
use crate::svg::{Chart, Style};

pub const CURVES: [(&str, &str); 4] = [
    ("fd", "Frechet distance"),
    ("bayes_acc", "Bayes accuracy"),
    ("mean_llr", "mean log-likelihood ratio"),
    ("recall_proxy", "recall proxy"),
];
pub const TRADEOFF: &str = "tradeoff.svg";

fn metric(r: &MetricRecord, key: &str) -> f64 {
    match key {
        "fd" => r.fd,
        "bayes_acc" => r.bayes_acc,
        "mean_llr" => r.mean_llr,
        _ => r.recall_proxy,
    }
}

/// Legend name and metric log of a run directory. The name comes from the
/// manifest when there is one, else from the directory.
pub fn load_run(dir: &Path) -> Result<(String, Vec<MetricRecord>)> {
    let records = read_metrics_csv(&dir.join(METRICS_CSV))?;
    let name = match RunManifest::load(dir) {
        Ok(m) => m.name,
        Err(_) => dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
    };
    Ok((name, records))
}

/// Writes one curve per metric against iteration plus the fd-vs-accuracy
/// trade-off, all runs overlaid. Returns the file names written.
pub fn write_run_plots(runs: &[(String, Vec<MetricRecord>)], out: &Path) -> Result<Vec<String>> {
    if runs.is_empty() {
        bail!("nothing to plot");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (key, label) in CURVES {
        let mut chart = Chart::new(&format!("{label} vs iteration"), "iteration", label);
        for (name, recs) in runs {
            let pts = recs.iter().map(|r| (r.iteration as f64, metric(r, key))).collect();
            chart.add(name, pts, Style::LineMarkers);
        }
        let file = format!("{key}.svg");
        fs::write(out.join(&file), chart.render())?;
        written.push(file);
    }
    let mut chart = Chart::new("fidelity trade-off across checkpoints", "Bayes accuracy", "Frechet distance");
    for (name, recs) in runs {
        chart.add(name, recs.iter().map(|r| (r.bayes_acc, r.fd)).collect(), Style::LineMarkers);
    }
    fs::write(out.join(TRADEOFF), chart.render())?;
    written.push(TRADEOFF.to_string());
    Ok(written)
}

/// `plot` subcommand: reads every run directory and writes the overlay to
/// `out`, defaulting to the first run's `plots/`.
pub fn plot_runs(dirs: &[PathBuf], out: Option<&Path>) -> Result<Vec<PathBuf>> {
    if dirs.is_empty() {
        bail!("plot needs at least one run directory");
    }
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dirs[0].join(crate::run::PLOT_DIR));
    Ok(write_run_plots(&runs, &out)?.into_iter().map(|f| out.join(f)).collect())
}

/// Scatter of labelled 2D samples, one colour per class.
pub fn sample_scatter(title: &str, groups: &[(usize, &Tensor)]) -> String {
    let mut chart = Chart::new(title, "x1", "x2");
    for (c, x) in groups {
        let pts = x.iter_rows().map(|r| (r[0], r[1])).collect();
        chart.add(&format!("class {c}"), pts, Style::Markers);
    }
    chart.render()
}
