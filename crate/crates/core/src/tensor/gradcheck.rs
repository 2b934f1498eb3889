//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Parameters with more elements than this are probed on a random
    /// subsample of exactly this many elements.
    pub max_elements: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, max_elements: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in input order.
    pub max_rel_error: Vec<f64>,
    /// Number of elements probed per parameter.
    pub probed: Vec<usize>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares autodiff gradients of `builder` against central differences.
///
/// `builder` maps parameter tensors to a scalar loss. It is called once with
/// the parameters attached to a fresh graph and then repeatedly with
/// perturbed, detached copies, so it must be deterministic.
pub fn grad_check<F>(params: &[Tensor], builder: F, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    grad_check_with(params, builder, seed, &GradCheckConfig::default())
}

pub fn grad_check_with<F>(
    params: &[Tensor],
    builder: F,
    seed: u64,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let graph = Graph::new();
    let leaves: Vec<Tensor> = params.iter().map(|p| graph.leaf(p)).collect();
    let loss = builder(&leaves)?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {value}")));
    }
    let grads = if loss.is_on_graph() { Some(loss.backward()?) } else { None };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut detached: Vec<Tensor> = params.iter().map(Tensor::detach).collect();
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let v = builder(ps)?.item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("perturbed loss is {v}")));
        }
        Ok(v)
    };

    let mut report = GradCheckReport { max_rel_error: Vec::new(), probed: Vec::new() };
    for (p, leaf) in leaves.iter().enumerate() {
        let analytic = match &grads {
            Some(g) => g.get_or_zeros(leaf)?.to_vec(),
            None => vec![0.0; leaf.len()],
        };
        let indices: Vec<usize> = if leaf.len() <= config.max_elements {
            (0..leaf.len()).collect()
        } else {
            let mut idx = sample(&mut rng, leaf.len(), config.max_elements).into_vec();
            idx.sort_unstable();
            idx
        };
        let original = params[p].to_vec();
        let mut worst = 0.0f64;
        for &i in &indices {
            let mut bumped = original.clone();
            bumped[i] = original[i] + config.step;
            detached[p] = Tensor::new(params[p].shape().to_vec(), bumped.clone())?;
            let up = eval(&detached)?;
            bumped[i] = original[i] - config.step;
            detached[p] = Tensor::new(params[p].shape().to_vec(), bumped)?;
            let down = eval(&detached)?;
            let numeric = (up - down) / (2.0 * config.step);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        detached[p] = params[p].detach();
        report.max_rel_error.push(worst);
        report.probed.push(indices.len());
    }
    Ok(report)
}
