use serde::{Deserialize, Serialize};

use super::losses::{cca_loss, ccdpo_loss, dsm_loss, dsm_plus_mclr_loss, mclr_loss, LossValue};
use super::tuples::{build_preference_tuples, build_tuples, denoising_terms, TupleApproach};
use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::{AdamState, DenoiserModel, Rng};
use crate::worlds::{GaussianMixtureWorld, LabeledBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    Dsm { label_dropout: f64 },
    Mclr,
    DsmPlusMclr { beta_dsm: f64 },
    Ccdpo { beta: f64 },
    Cca { beta: f64, lambda: f64 },
}

impl Objective {
    /// Fine-tuning objectives start from an existing base model.
    pub fn needs_base_model(&self) -> bool {
        !matches!(self, Objective::Dsm { .. })
    }

    pub fn needs_reference(&self) -> bool {
        matches!(self, Objective::Ccdpo { .. } | Objective::Cca { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Dsm { label_dropout } if !(0.0..=1.0).contains(&label_dropout) => {
                Err(invalid("label_dropout must lie in [0, 1]"))
            }
            Objective::DsmPlusMclr { beta_dsm } if !(beta_dsm >= 0.0) => Err(invalid("beta_dsm must be >= 0")),
            Objective::Ccdpo { beta } if !(beta > 0.0) => Err(invalid("beta must be > 0")),
            Objective::Cca { beta, lambda } if !(beta > 0.0) || !(lambda > 0.0) => {
                Err(invalid("cca needs beta > 0 and lambda > 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub objective: Objective,
    #[serde(default)]
    pub approach: TupleApproach,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.approach.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be > 0"));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch_size must be >= 2"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint_every must be >= 1"));
        }
        Ok(())
    }
}

/// Receives the model at iteration 0, every `checkpoint_every` iterations
/// and at the final iteration, with the mean loss since the previous call.
pub trait TrainObserver {
    fn on_checkpoint(&mut self, iteration: usize, model: &DenoiserModel, window_loss: Option<f64>) -> Result<()>;
}

impl<F> TrainObserver for F
where
    F: FnMut(usize, &DenoiserModel, Option<f64>) -> Result<()>,
{
    fn on_checkpoint(&mut self, iteration: usize, model: &DenoiserModel, window_loss: Option<f64>) -> Result<()> {
        self(iteration, model, window_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    /// Loss of every iteration, in order.
    pub losses: Vec<f64>,
}

/// One loss evaluation on a fresh minibatch.
pub fn objective_step(
    spec: &TrainSpec,
    model: &DenoiserModel,
    reference: &DenoiserModel,
    batch: &LabeledBatch,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<LossValue> {
    match spec.objective {
        Objective::Dsm { label_dropout } => {
            let terms = denoising_terms(batch, schedule, label_dropout, rng)?;
            dsm_loss(model, &terms, schedule)
        }
        Objective::Mclr => {
            let tuples = build_tuples(batch, spec.approach, schedule, rng)?;
            mclr_loss(model, &tuples, schedule)
        }
        Objective::DsmPlusMclr { beta_dsm } => {
            let terms = denoising_terms(batch, schedule, 0.0, rng)?;
            let tuples = build_tuples(batch, spec.approach, schedule, rng)?;
            dsm_plus_mclr_loss(model, &terms, &tuples, schedule, beta_dsm)
        }
        Objective::Ccdpo { beta } => {
            let tuples = build_preference_tuples(batch, spec.approach, schedule, rng)?;
            ccdpo_loss(model, reference, &tuples, schedule, beta)
        }
        Objective::Cca { beta, lambda } => {
            let tuples = build_preference_tuples(batch, spec.approach, schedule, rng)?;
            cca_loss(model, reference, &tuples, schedule, beta, lambda)
        }
    }
}

/// Draws a minibatch, redrawing until it holds at least two labels when the
/// objective contrasts classes.
fn draw_batch(
    world: &GaussianMixtureWorld,
    spec: &TrainSpec,
    rng: &mut Rng,
) -> Result<LabeledBatch> {
    let contrastive = spec.objective.needs_base_model();
    for _ in 0..1000 {
        let b = world.sample_labeled(spec.batch_size, rng)?;
        if !contrastive || b.distinct_labels() >= 2 {
            return Ok(b);
        }
    }
    Err(invalid("world never produced a minibatch with two distinct labels"))
}

/// Runs the optimization loop. The reference model for preference
/// objectives defaults to a frozen copy of `init`.
pub fn train(
    spec: &TrainSpec,
    world: &GaussianMixtureWorld,
    schedule: &NoiseSchedule,
    init: DenoiserModel,
    reference: Option<&DenoiserModel>,
    rng: &mut Rng,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    spec.validate()?;
    schedule.validate()?;
    let frozen;
    let reference = match reference {
        Some(r) => r,
        None => {
            frozen = init.clone();
            &frozen
        }
    };
    let mut model = init;
    let mut adam = AdamState::new(model.param_count(), spec.learning_rate);
    let mut losses = Vec::with_capacity(spec.iterations);
    observer.on_checkpoint(0, &model, None)?;
    let mut window_start = 0;
    for it in 1..=spec.iterations {
        let batch = draw_batch(world, spec, rng)?;
        let lv = objective_step(spec, &model, reference, &batch, schedule, rng)?;
        if !lv.loss.is_finite() || lv.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                loss: lv.loss,
            });
        }
        adam.step(model.params_mut(), &lv.grad)?;
        losses.push(lv.loss);
        if it % spec.checkpoint_every == 0 || it == spec.iterations {
            let w = &losses[window_start..];
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            window_start = losses.len();
            observer.on_checkpoint(it, &model, Some(mean))?;
        }
    }
    Ok(TrainOutcome { model, losses })
}
