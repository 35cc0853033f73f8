use super::network::DenoiserModel;
use super::rng::Rng;
use crate::error::{invalid, Result};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Below this magnitude gradients are compared in absolute terms.
const ABS_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient returned by `loss_fn` against central
/// finite differences on `probe_count` distinct randomly chosen parameters,
/// returning the largest relative error.
///
/// `loss_fn` must be deterministic: it is called repeatedly on perturbed
/// copies of `model` and must return `(loss, gradient)`.
pub fn grad_check<F>(loss_fn: F, model: &DenoiserModel, probe_count: usize, rng: &mut Rng) -> Result<f64>
where
    F: Fn(&DenoiserModel) -> Result<(f64, Vec<f64>)>,
{
    let n = model.param_count();
    if probe_count == 0 || probe_count > n {
        return Err(invalid(format!("probe_count {probe_count} not in 1..={n}")));
    }
    let (_, analytic) = loss_fn(model)?;
    if analytic.len() != n {
        return Err(invalid("gradient length differs from parameter count"));
    }
    // Partial Fisher-Yates for distinct indices.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..probe_count {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for &k in &idx[..probe_count] {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + FD_STEP;
        let (lp, _) = loss_fn(&probe)?;
        probe.params_mut()[k] = orig - FD_STEP;
        let (lm, _) = loss_fn(&probe)?;
        probe.params_mut()[k] = orig;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let a = analytic[k];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(ABS_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::network::{Architecture, Preconditioning};

    #[test]
    fn linear_loss_in_one_weight_is_exact() {
        let arch = Architecture {
            data_dim: 2,
            hidden_layers: 1,
            width: 4,
            num_classes: 2,
            embed_dim: 2,
        };
        let mut rng = Rng::new(11);
        let model = DenoiserModel::init(arch, Preconditioning::Identity, &mut rng).unwrap();
        let k = 7;
        let n = model.param_count();
        let loss = |m: &DenoiserModel| -> Result<(f64, Vec<f64>)> {
            let mut g = vec![0.0; n];
            g[k] = 2.5;
            Ok((2.5 * m.params()[k], g))
        };
        let err = grad_check(loss, &model, n, &mut rng).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let arch = Architecture {
            data_dim: 2,
            hidden_layers: 1,
            width: 4,
            num_classes: 2,
            embed_dim: 2,
        };
        let mut rng = Rng::new(12);
        let model = DenoiserModel::init(arch, Preconditioning::Identity, &mut rng).unwrap();
        let loss = |m: &DenoiserModel| -> Result<(f64, Vec<f64>)> {
            let l: f64 = m.params().iter().map(|p| p * p).sum();
            Ok((l, m.params().to_vec()))
        };
        let err = grad_check(loss, &model, 10, &mut rng).unwrap();
        assert!(err > 0.4);
    }
}
