use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use guidefree::diffusion::{GuidanceSpec, NoiseLaw, NoiseSchedule, Weighting};
use guidefree::metrics::EvalSpec;
use guidefree::numerics::{Architecture, Preconditioning};
use guidefree::objectives::{Objective, TrainSpec};
use guidefree::worlds::GaussianMixtureWorld;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

/// Loss weighting as named in a config; EDM weighting borrows `sigma_data`
/// from the preconditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingChoice {
    Constant,
    InverseVariance,
    EdmBalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSchedule {
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(default)]
    pub noise_law: NoiseLaw,
    /// Defaults to EDM weighting for denoising and constant weighting for
    /// the contrastive objectives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<WeightingChoice>,
}

fn default_sigma_min() -> f64 {
    0.002
}

fn default_sigma_max() -> f64 {
    80.0
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            sigma_min: default_sigma_min(),
            sigma_max: default_sigma_max(),
            noise_law: NoiseLaw::LogUniform,
            weighting: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
    /// Sampling grid size, terminal zero included.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub guidance: GuidanceSpec,
    #[serde(default = "default_grid")]
    pub grid_cells: usize,
    /// Fixed across checkpoints; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Metric cadence in iterations; must be a multiple of
    /// `train.checkpoint_every`. Defaults to the checkpoint cadence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<usize>,
}

fn yes() -> bool {
    true
}

fn default_samples() -> usize {
    4096
}

fn default_steps() -> usize {
    64
}

fn default_grid() -> usize {
    32
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            samples_per_class: default_samples(),
            steps: default_steps(),
            guidance: GuidanceSpec::none(),
            grid_cells: default_grid(),
            seed: None,
            every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    #[serde(default = "GaussianMixtureWorld::default_world")]
    pub world: GaussianMixtureWorld,
    /// Ignored when `init_checkpoint` is set: the checkpoint carries its own.
    #[serde(default)]
    pub architecture: Architecture,
    /// EDM preconditioning scale; defaults to the world's data std.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_data: Option<f64>,
    #[serde(default)]
    pub schedule: TrainingSchedule,
    pub train: TrainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    /// Frozen reference for the preference objectives; defaults to the
    /// initial model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Run directory. Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the offending field path on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("invalid config at `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative checkpoint paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.init_checkpoint, &mut cfg.reference_checkpoint, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
        }
        self.world.validate().context("world")?;
        self.train.validate().context("train")?;
        if let Some(sd) = self.sigma_data {
            if !(sd > 0.0) {
                bail!("sigma_data must be positive");
            }
        }
        self.training_schedule().validate().context("schedule")?;
        if self.train.objective.needs_base_model() && self.init_checkpoint.is_none() {
            bail!("fine-tuning objective needs `init_checkpoint`");
        }
        if self.init_checkpoint.is_none() && self.architecture.num_classes != self.world.num_classes() {
            bail!(
                "architecture has {} classes, world has {}",
                self.architecture.num_classes,
                self.world.num_classes()
            );
        }
        let e = &self.eval;
        if e.samples_per_class < 2 || e.steps < 2 || e.grid_cells == 0 {
            bail!("eval needs samples_per_class >= 2, steps >= 2, grid_cells >= 1");
        }
        e.guidance.validate().context("eval.guidance")?;
        if let Some(every) = e.every {
            if every == 0 || every % self.train.checkpoint_every != 0 {
                bail!("eval.every must be a positive multiple of train.checkpoint_every");
            }
        }
        Ok(())
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data.unwrap_or_else(|| self.world.data_std())
    }

    pub fn preconditioning(&self) -> Preconditioning {
        Preconditioning::Edm {
            sigma_data: self.sigma_data(),
        }
    }

    pub fn training_schedule(&self) -> NoiseSchedule {
        let choice = self.schedule.weighting.unwrap_or(match self.train.objective {
            Objective::Dsm { .. } => WeightingChoice::EdmBalanced,
            _ => WeightingChoice::Constant,
        });
        let weighting = match choice {
            WeightingChoice::Constant => Weighting::Constant,
            WeightingChoice::InverseVariance => Weighting::InverseVariance,
            WeightingChoice::EdmBalanced => Weighting::EdmBalanced {
                sigma_data: self.sigma_data(),
            },
        };
        NoiseSchedule {
            sigma_min: self.schedule.sigma_min,
            sigma_max: self.schedule.sigma_max,
            noise_law: self.schedule.noise_law,
            weighting,
            ..NoiseSchedule::default()
        }
    }

    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            samples_per_class: self.eval.samples_per_class,
            schedule: NoiseSchedule::default().with_steps(self.eval.steps),
            guidance: self.eval.guidance,
            grid_cells: self.eval.grid_cells,
            seed: self.eval.seed.unwrap_or(self.seed),
        }
    }

    pub fn metric_every(&self) -> usize {
        self.eval.every.unwrap_or(self.train.checkpoint_every)
    }

    /// Sorted-key JSON of everything except the output directory.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let v = serde_json::to_value(&c).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("run-{}", &self.hash()[..12]))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
