use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{init_params, refine, HeadMode, RefinerConfig, RefinerParams, Sample};
use crate::error::{Error, Result};
use crate::losses::{loss_dice, loss_focal, loss_ssi, loss_total, TotalLoss};
use crate::metrics::{compute_metrics, DepthMap, Space};
use crate::tensor::{ops, Graph, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples per step, drawn from per-epoch shuffles of the dataset.
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { steps: 200, lr: 0.1, seed: 0, batch_size: 4 }
    }
}

/// Batch means of one step's losses, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub ssi: f64,
    pub dice: f64,
    pub focal: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    pub params: RefinerParams,
}

struct SampleLoss {
    total: TotalLoss,
    ssi: f64,
    dice: f64,
    focal: f64,
}

fn sample_loss(params: &RefinerParams, sample: &Sample) -> Result<SampleLoss> {
    let out = refine(&sample.inputs, params)?;
    let probs = ops::softmax_channels(&out.seg_logits)?;
    let dice = loss_dice(&sample.segmentation, &probs)?;
    let focal = loss_focal(&sample.segmentation, &probs)?;
    let ssi = match params.config.head_mode {
        HeadMode::Pixel => loss_ssi(&sample.target, &out.depth, None)?,
        HeadMode::LatentSurrogate => {
            let b = params.config.base_channels as f64;
            let readout = ops::mul_scalar(&ops::sum_channels(&out.features)?, 1.0 / b)?;
            loss_ssi(&sample.target_quarter, &ops::downsample_avg_x2(&readout)?, None)?
        }
    };
    let total = loss_total(&dice, &focal, &ssi.value)?;
    Ok(SampleLoss { ssi: ssi.value.item()?, dice: dice.item()?, focal: focal.item()?, total })
}

/// Plain gradient descent on the combined objective.
///
/// The focal term sums over pixels, so the step is divided by the pixel
/// count to keep `lr` independent of the output resolution.
pub fn train_toy(config: &RefinerConfig, dataset: &[Sample], options: &TrainOptions) -> Result<TrainReport> {
    if options.steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if !(options.lr > 0.0 && options.lr.is_finite()) {
        return Err(Error::invalid(format!("lr must be positive, got {}", options.lr)));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if options.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut params = init_params(config, options.seed)?;
    let (h, w) = config.output_resolution();
    let step_size = options.lr / (h * w) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x7a11_5eed);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(options.steps);

    for step in 1..=options.steps {
        let mut batch = Vec::with_capacity(options.batch_size);
        while batch.len() < options.batch_size.min(dataset.len()) {
            if order.is_empty() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled"));
        }

        let graph = Graph::new();
        let attached = params.attach(&graph);
        let n = batch.len() as f64;
        let mut objective: Option<Tensor> = None;
        let mut record = LossRecord { step, total: 0.0, ssi: 0.0, dice: 0.0, focal: 0.0, lambda: 0.0 };
        for &i in &batch {
            let l = sample_loss(&attached, &dataset[i])?;
            let value = l.total.value.item()?;
            if !value.is_finite() {
                return Err(Error::Diverged { step, detail: format!("total loss is {value} on sample {i}") });
            }
            record.total += value / n;
            record.ssi += l.ssi / n;
            record.dice += l.dice / n;
            record.focal += l.focal / n;
            record.lambda += l.total.lambda / n;
            objective = Some(match objective {
                None => l.total.value,
                Some(acc) => ops::add(&acc, &l.total.value)?,
            });
        }
        history.push(record);

        let objective = objective.expect("non-empty batch");
        let grads = objective.backward()?;
        let mut updated = Vec::new();
        for (leaf, current) in attached.tensors().iter().zip(params.tensors()) {
            let g = grads.get_or_zeros(leaf)?;
            let data: Vec<f64> = current.data().iter().zip(g.data()).map(|(p, g)| p - step_size / n * g).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step, detail: "parameter update is not finite".into() });
            }
            updated.push(Tensor::new(current.shape().to_vec(), data)?);
        }
        params = params.with_tensors(updated)?;
    }
    Ok(TrainReport { history, params })
}

/// Mean losses of `params` over every sample, evaluated without a graph.
/// The record's step is 0.
pub fn dataset_loss(params: &RefinerParams, samples: &[Sample]) -> Result<LossRecord> {
    if samples.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let n = samples.len() as f64;
    let mut r = LossRecord { step: 0, total: 0.0, ssi: 0.0, dice: 0.0, focal: 0.0, lambda: 0.0 };
    for s in samples {
        let l = sample_loss(params, s)?;
        r.total += l.total.value.item()? / n;
        r.ssi += l.ssi / n;
        r.dice += l.dice / n;
        r.focal += l.focal / n;
        r.lambda += l.total.lambda / n;
    }
    Ok(r)
}

/// Mean affine-aligned δ1 of the depth head over `samples`.
pub fn evaluate_delta1(params: &RefinerParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut total = 0.0;
    for s in samples {
        let out = refine(&s.inputs, params)?;
        let (_, h, w) = s.depth.chw()?;
        let gt = DepthMap::new(h, w, s.depth.to_vec(), Space::Depth)?;
        let pred = DepthMap::relative(h, w, out.depth.to_vec(), Space::Depth)?;
        total += compute_metrics(&gt, &pred)?.delta1;
    }
    Ok(total / samples.len() as f64)
}
