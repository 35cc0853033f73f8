use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use guidefree::diffusion::GuidanceSpec;
use guidefree::metrics::{evaluate, EvalSpec};
use guidefree::numerics::Checkpoint;
use guidefree::worlds::GaussianMixtureWorld;
use guidefree_lab::sample::{sample_checkpoint, SampleRequest};
use guidefree_lab::sweep::{gamma_sweep, sweep_configs, thread_limit, write_gamma_sweep, DEFAULT_GAMMAS};
use guidefree_lab::verify::{verify, Suite};
use guidefree_lab::{plot, train_run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "guidefree", version, about = "Train, sample, verify and plot guidance-free diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to the config's `out`, then runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint: per-class CSVs and a scatter SVG.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample only this class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        /// CFG strength; 0 is plain conditional sampling.
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the same initial noise for every class.
        #[arg(long)]
        shared_noise: bool,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, default_value = "samples")]
        out: PathBuf,
    },
    /// Check closed-form optima against numerical oracles. Exits 1 on failure.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replaces every check's tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one checkpoint.
    Metrics {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Supplies the world and evaluation settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Samples per class.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several configs in parallel, or sweep CFG strength over one
    /// checkpoint.
    Sweep {
        #[arg(long)]
        config: Vec<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        /// Strengths for a checkpoint sweep; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Render learning curves and the trade-off plot for one or more runs.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_dir(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    root.join(cfg.display_name())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("wrote {}", p.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn eval_setup(config: Option<&Path>) -> Result<(GaussianMixtureWorld, EvalSpec)> {
    Ok(match config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            (cfg.world.clone(), cfg.eval_spec())
        }
        None => (GaussianMixtureWorld::default_world(), EvalSpec::default()),
    })
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train { config, seed, out } => {
            let cfg = load_with_seed(&config, seed)?;
            let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| run_dir(&cfg, Path::new("runs")));
            let m = train_run(&cfg, &dir)?;
            eprintln!(
                "{}: {} checkpoints in {} ({:.1}s)",
                m.name,
                m.checkpoints.len(),
                dir.display(),
                m.wall_clock_seconds
            );
        }
        Command::Sample {
            checkpoint,
            class,
            n,
            gamma,
            seed,
            shared_noise,
            steps,
            out,
        } => {
            let req = SampleRequest {
                checkpoint,
                class,
                n,
                gamma,
                seed,
                shared_noise,
                steps,
                out,
            };
            for p in sample_checkpoint(&req)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Verify {
            suite,
            seed,
            tolerance,
            out,
        } => {
            let report = verify(suite, seed, tolerance)?;
            for s in &report.suites {
                for c in &s.checks {
                    eprintln!(
                        "{} {}/{}: worst {} {:e} (tolerance {:e}, {} instances)",
                        if c.passed { "PASS" } else { "FAIL" },
                        s.suite,
                        c.name,
                        c.measure,
                        c.worst_gap,
                        c.tolerance,
                        c.instances
                    );
                }
            }
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            return Ok(report.passed);
        }
        Command::Metrics {
            checkpoint,
            config,
            gamma,
            n,
            seed,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let (world, mut spec) = eval_setup(config.as_deref())?;
            if let Some(g) = gamma {
                spec.guidance = GuidanceSpec::cfg(g);
            }
            if let Some(n) = n {
                spec.samples_per_class = n;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let rec = evaluate(&ck.model, &world, &spec, ck.iteration as usize, None)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&rec)?)?;
        }
        Command::Sweep {
            config,
            checkpoint,
            gamma,
            n,
            seed,
            out,
        } => {
            let threads = thread_limit();
            if let Some(ck_path) = checkpoint {
                let ck = Checkpoint::load(&ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
                let mut spec = EvalSpec::default();
                if let Some(n) = n {
                    spec.samples_per_class = n;
                }
                if let Some(s) = seed {
                    spec.seed = s;
                }
                let gammas = if gamma.is_empty() { DEFAULT_GAMMAS.to_vec() } else { gamma };
                let world = GaussianMixtureWorld::default_world();
                let points = gamma_sweep(&ck.model, &world, &spec, &gammas, threads)?;
                for p in write_gamma_sweep(&points, &out)? {
                    eprintln!("wrote {}", p.display());
                }
            } else {
                if config.is_empty() {
                    bail!("sweep needs --config (one or more) or --checkpoint");
                }
                let runs = config
                    .iter()
                    .map(|p| {
                        let cfg = load_with_seed(p, seed)?;
                        let dir = run_dir(&cfg, &out);
                        Ok((cfg, dir))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut failed = 0;
                for (r, p) in sweep_configs(runs, threads).into_iter().zip(&config) {
                    match r {
                        Ok(m) => eprintln!("{}: done ({:.1}s)", m.name, m.wall_clock_seconds),
                        Err(e) => {
                            failed += 1;
                            eprintln!("{}: {e:#}", p.display());
                        }
                    }
                }
                if failed > 0 {
                    bail!("{failed} of {} runs failed", config.len());
                }
            }
        }
        Command::Plot { runs, out } => {
            for p in plot::plot_runs(&runs, out.as_deref())? {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
