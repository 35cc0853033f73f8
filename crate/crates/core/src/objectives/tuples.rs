use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Result};
use crate::numerics::Rng;
use crate::worlds::LabeledBatch;

/// How mismatched partners are attached to each minibatch sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TupleApproach {
    /// One partner per sample, `N` tuples.
    #[default]
    Single,
    /// `k` partners per sample sharing the sample's noise draw, `N k` tuples.
    Multi { k: usize },
}

impl TupleApproach {
    pub fn partners(&self) -> usize {
        match *self {
            TupleApproach::Single => 1,
            TupleApproach::Multi { k } => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.partners() == 0 {
            return Err(invalid("multi-partner tuples need k >= 1"));
        }
        Ok(())
    }
}

/// `(x, c, c_tilde, sigma, eps)`: a sample, its class, a mismatched class
/// and the noise draw shared by both denoiser evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveTuple {
    pub origin: usize,
    pub x: Vec<f64>,
    pub c: usize,
    pub c_tilde: usize,
    pub sigma: f64,
    pub eps: Vec<f64>,
}

/// `(x_w, x_l, c, sigma, eps)`: a winner from class `c`, a loser from class
/// `c_l != c`, and one noise draw applied to both.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceTuple {
    pub origin: usize,
    pub x_w: Vec<f64>,
    pub x_l: Vec<f64>,
    pub c: usize,
    pub c_l: usize,
    pub sigma: f64,
    pub eps: Vec<f64>,
}

/// `(x, class or null, sigma, eps)` for plain denoising.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisingTerm {
    pub x: Vec<f64>,
    pub class: Option<usize>,
    pub sigma: f64,
    pub eps: Vec<f64>,
}

/// Positions of every row whose label differs from that row's label.
fn mismatch_pools(batch: &LabeledBatch) -> Result<Vec<Vec<usize>>> {
    if batch.distinct_labels() < 2 {
        return Err(invalid("minibatch needs at least two distinct labels"));
    }
    Ok(batch
        .labels
        .iter()
        .map(|&c| {
            batch
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != c)
                .map(|(j, _)| j)
                .collect()
        })
        .collect())
}

/// Per-sample draws: for each row one `(sigma, eps)`, then its partner
/// positions, chosen uniformly with replacement among rows of other labels.
fn draw(
    batch: &LabeledBatch,
    approach: TupleApproach,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<(f64, Vec<f64>, Vec<usize>)>> {
    approach.validate()?;
    let pools = mismatch_pools(batch)?;
    let dim = batch.x.cols();
    let k = approach.partners();
    Ok(pools
        .iter()
        .map(|pool| {
            let sigma = schedule.sample_sigma(rng);
            let eps = rng.normals(dim);
            let partners = (0..k).map(|_| pool[rng.below(pool.len())]).collect();
            (sigma, eps, partners)
        })
        .collect())
}

/// Contrastive tuples for the margin objective.
pub fn build_tuples(
    batch: &LabeledBatch,
    approach: TupleApproach,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<ContrastiveTuple>> {
    let draws = draw(batch, approach, schedule, rng)?;
    let mut out = Vec::with_capacity(draws.len() * approach.partners());
    for (i, (sigma, eps, partners)) in draws.into_iter().enumerate() {
        for j in partners {
            out.push(ContrastiveTuple {
                origin: i,
                x: batch.x.row(i).to_vec(),
                c: batch.labels[i],
                c_tilde: batch.labels[j],
                sigma,
                eps: eps.clone(),
            });
        }
    }
    Ok(out)
}

/// Preference tuples: each row is a winner for its own class, losers are
/// rows of other labels.
pub fn build_preference_tuples(
    batch: &LabeledBatch,
    approach: TupleApproach,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<PreferenceTuple>> {
    let draws = draw(batch, approach, schedule, rng)?;
    let mut out = Vec::with_capacity(draws.len() * approach.partners());
    for (i, (sigma, eps, partners)) in draws.into_iter().enumerate() {
        for j in partners {
            out.push(PreferenceTuple {
                origin: i,
                x_w: batch.x.row(i).to_vec(),
                x_l: batch.x.row(j).to_vec(),
                c: batch.labels[i],
                c_l: batch.labels[j],
                sigma,
                eps: eps.clone(),
            });
        }
    }
    Ok(out)
}

/// Denoising terms with each label independently replaced by the null class
/// with probability `dropout_p`.
pub fn denoising_terms(
    batch: &LabeledBatch,
    schedule: &NoiseSchedule,
    dropout_p: f64,
    rng: &mut Rng,
) -> Result<Vec<DenoisingTerm>> {
    if !(0.0..=1.0).contains(&dropout_p) {
        return Err(invalid(format!("dropout probability {dropout_p} outside [0, 1]")));
    }
    let dim = batch.x.cols();
    Ok((0..batch.len())
        .map(|i| {
            let sigma = schedule.sample_sigma(rng);
            let eps = rng.normals(dim);
            let drop = rng.uniform() < dropout_p;
            DenoisingTerm {
                x: batch.x.row(i).to_vec(),
                class: if drop { None } else { Some(batch.labels[i]) },
                sigma,
                eps,
            }
        })
        .collect())
}
