//! Finite-difference checks over every differentiable operation, from the
//! tensor primitives up to the refiners and training losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{loss_dice, loss_focal, loss_ssi, loss_total, normalize_gt};
use crate::preimage::{fuse_stage, synth_preimage, FusionParams};
use crate::refiner::{init_params, refine, synthetic_dataset, InjectionMode, RefinerConfig};
use crate::tensor::gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};
use crate::tensor::{ops, Tensor};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const COMPONENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Total elements probed across all parameters.
    pub probed: usize,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

/// Values in `±[0.2, 1]`, kept away from the kinks at zero.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

fn onehot(classes: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = vec![0.0; classes * h * w];
    for i in 0..h * w {
        data[rng.gen_range(0..classes) * h * w + i] = 1.0;
    }
    Tensor::new(vec![classes, h, w], data).expect("valid shape")
}

fn record(name: &str, tolerance: f64, report: GradCheckReport) -> ComponentCheck {
    ComponentCheck {
        name: name.to_string(),
        max_rel_error: report.worst(),
        tolerance,
        probed: report.probed.iter().sum(),
    }
}

type Forward = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

/// Checks a tensor-valued map through a fixed random projection to a
/// scalar.
fn check_projected(name: &str, tolerance: f64, params: Vec<Tensor>, f: Forward, rng: &mut ChaCha8Rng, seed: u64) -> Result<ComponentCheck> {
    let shape = f(&params)?.shape().to_vec();
    let weights = uniform(&shape, -1.0, 1.0, rng);
    let report = grad_check(&params, |p| ops::sum_all(&ops::mul(&f(p)?, &weights)?), seed)?;
    Ok(record(name, tolerance, report))
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Forward)> {
    let x = |rng: &mut ChaCha8Rng| uniform(&[3, 4, 5], -1.0, 1.0, rng);
    vec![
        ("reshape", vec![x(rng)], Box::new(|p: &[Tensor]| ops::reshape(&p[0], vec![12, 5])) as Forward),
        ("concat_channels", vec![x(rng), uniform(&[2, 4, 5], -1.0, 1.0, rng)], Box::new(|p: &[Tensor]| ops::concat_channels(&[&p[0], &p[1]]))),
        ("slice_channels", vec![x(rng)], Box::new(|p: &[Tensor]| ops::slice_channels(&p[0], 1, 2))),
        ("conv2d_1x1", vec![x(rng), uniform(&[2, 3, 1, 1], -1.0, 1.0, rng)], Box::new(|p: &[Tensor]| ops::conv2d_1x1(&p[0], &p[1]))),
        ("conv2d_3x3", vec![x(rng), uniform(&[2, 3, 3, 3], -1.0, 1.0, rng)], Box::new(|p: &[Tensor]| ops::conv2d_3x3(&p[0], &p[1]))),
        ("silu", vec![x(rng)], Box::new(|p: &[Tensor]| ops::silu(&p[0]))),
        ("relu", vec![away_from_zero(&[3, 4, 5], rng)], Box::new(|p: &[Tensor]| ops::relu(&p[0]))),
        ("log", vec![uniform(&[3, 4, 5], 0.5, 2.0, rng)], Box::new(|p: &[Tensor]| ops::log(&p[0]))),
        ("clamp_min", vec![away_from_zero(&[3, 4, 5], rng)], Box::new(|p: &[Tensor]| ops::clamp_min(&p[0], 0.0))),
        ("resize_bilinear", vec![x(rng)], Box::new(|p: &[Tensor]| ops::resize_bilinear(&p[0], 7, 3))),
        ("upsample_bilinear_x2", vec![x(rng)], Box::new(|p: &[Tensor]| ops::upsample_bilinear_x2(&p[0]))),
        ("downsample_avg_x2", vec![uniform(&[2, 4, 6], -1.0, 1.0, rng)], Box::new(|p: &[Tensor]| ops::downsample_avg_x2(&p[0]))),
        ("softmax_channels", vec![x(rng)], Box::new(|p: &[Tensor]| ops::softmax_channels(&p[0]))),
        ("add", vec![x(rng), x(rng)], Box::new(|p: &[Tensor]| ops::add(&p[0], &p[1]))),
        ("sub", vec![x(rng), x(rng)], Box::new(|p: &[Tensor]| ops::sub(&p[0], &p[1]))),
        ("mul", vec![x(rng), x(rng)], Box::new(|p: &[Tensor]| ops::mul(&p[0], &p[1]))),
        ("div", vec![x(rng), uniform(&[3, 4, 5], 0.5, 2.0, rng)], Box::new(|p: &[Tensor]| ops::div(&p[0], &p[1]))),
        ("mul_scalar", vec![x(rng)], Box::new(|p: &[Tensor]| ops::mul_scalar(&p[0], -1.7))),
        ("add_scalar", vec![x(rng)], Box::new(|p: &[Tensor]| ops::add_scalar(&p[0], 0.3))),
        ("scale_by", vec![x(rng), uniform(&[1], 0.5, 2.0, rng)], Box::new(|p: &[Tensor]| ops::scale_by(&p[0], &p[1]))),
        ("add_broadcast", vec![x(rng), uniform(&[1], -1.0, 1.0, rng)], Box::new(|p: &[Tensor]| ops::add_broadcast(&p[0], &p[1]))),
        ("mean_all", vec![x(rng)], Box::new(|p: &[Tensor]| ops::mean_all(&p[0]))),
        ("sum_all", vec![x(rng)], Box::new(|p: &[Tensor]| ops::sum_all(&p[0]))),
        ("block_mean_pool", vec![uniform(&[2, 8, 8], -1.0, 1.0, rng)], Box::new(|p: &[Tensor]| ops::block_mean_pool(&p[0], 4, 2))),
        ("sum_channels", vec![x(rng)], Box::new(|p: &[Tensor]| ops::sum_channels(&p[0]))),
    ]
}

/// Primitives only, checked against [`PRIMITIVE_TOLERANCE`].
pub fn check_primitives(seed: u64) -> Result<Vec<ComponentCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = primitive_cases(&mut rng);
    let mut out = Vec::with_capacity(cases.len());
    for (name, params, f) in cases {
        out.push(check_projected(name, PRIMITIVE_TOLERANCE, params, f, &mut rng, seed)?);
    }
    Ok(out)
}

fn small_refiner(mode: InjectionMode) -> RefinerConfig {
    RefinerConfig {
        stages: 2,
        base_channels: 4,
        seg_classes: 3,
        injection_mode: mode,
        latent_height: 8,
        latent_width: 8,
        ..RefinerConfig::default()
    }
}

/// Composite modules and losses, checked against [`COMPONENT_TOLERANCE`].
pub fn check_components(seed: u64) -> Result<Vec<ComponentCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_ffee);
    let mut out = Vec::new();

    let image = uniform(&[3, 8, 8], 0.0, 1.0, &mut rng);
    let stage = synth_preimage(&image, seed, 1)?.remove(0);
    let fusion = FusionParams::init(stage.fused_input_channels(), 4, &mut rng)?;
    let f: Forward = Box::new(move |p| fuse_stage(&stage, 4, &FusionParams { project: p[0].clone(), output: p[1].clone(), activation: true }));
    out.push(check_projected("fuse_stage", COMPONENT_TOLERANCE, vec![fusion.project, fusion.output], f, &mut rng, seed)?);

    for (name, mode) in [("refine_stagewise", InjectionMode::Stagewise), ("refine_block", InjectionMode::Block)] {
        let cfg = small_refiner(mode);
        let sample = synthetic_dataset(&cfg, 1, seed)?.remove(0);
        let params = init_params(&cfg, seed)?;
        let (h, w) = cfg.output_resolution();
        let wd = uniform(&[1, h, w], -1.0, 1.0, &mut rng);
        let ws = uniform(&[cfg.seg_classes, h, w], -1.0, 1.0, &mut rng);
        // Fusion weights of the deepest stage see gradients near 1e-9, where
        // a smaller step is dominated by round-off in the loss sum.
        let fd = GradCheckConfig { step: 1e-4, ..GradCheckConfig::default() };
        let report = grad_check_with(
            &params.tensors(),
            |p| {
                let out = refine(&sample.inputs, &params.with_tensors(p.to_vec())?)?;
                ops::add(&ops::sum_all(&ops::mul(&out.depth, &wd)?)?, &ops::sum_all(&ops::mul(&out.seg_logits, &ws)?)?)
            },
            seed,
            &fd,
        )?;
        out.push(record(name, COMPONENT_TOLERANCE, report));
    }

    let (h, w) = (6, 6);
    let depth = uniform(&[1, h, w], 1.0, 10.0, &mut rng);
    let mask = Tensor::new(vec![1, h, w], (0..h * w).map(|i| if i % 7 == 3 { 0.0 } else { 1.0 }).collect())?;
    let target = normalize_gt(&depth, Some(&mask))?;
    let pred = uniform(&[1, h, w], -1.0, 1.0, &mut rng);
    let report = grad_check(std::slice::from_ref(&pred), |p| Ok(loss_ssi(&target, &p[0], Some(&mask))?.value), seed)?;
    out.push(record("loss_ssi", COMPONENT_TOLERANCE, report));

    let classes = 3;
    let truth = onehot(classes, h, w, &mut rng);
    let logits = uniform(&[classes, h, w], -2.0, 2.0, &mut rng);
    let report = grad_check(std::slice::from_ref(&logits), |p| loss_dice(&truth, &ops::softmax_channels(&p[0])?), seed)?;
    out.push(record("loss_dice", COMPONENT_TOLERANCE, report));
    let report = grad_check(std::slice::from_ref(&logits), |p| loss_focal(&truth, &ops::softmax_channels(&p[0])?), seed)?;
    out.push(record("loss_focal", COMPONENT_TOLERANCE, report));

    // The weight is a stop-gradient constant, so the finite-difference
    // reference holds it at its unperturbed value.
    let parts = |p: &[Tensor]| -> Result<(Tensor, Tensor, Tensor)> {
        let probs = ops::softmax_channels(&p[1])?;
        Ok((loss_dice(&truth, &probs)?, loss_focal(&truth, &probs)?, loss_ssi(&target, &p[0], Some(&mask))?.value))
    };
    let (d0, f0, s0) = parts(&[pred.clone(), logits.clone()])?;
    let lambda0 = loss_total(&d0, &f0, &s0)?.lambda;
    let report = grad_check(
        &[pred, logits],
        |p| {
            let (d, f, s) = parts(p)?;
            if p[0].is_on_graph() {
                Ok(loss_total(&d, &f, &s)?.value)
            } else {
                ops::add(&ops::add(&d, &f)?, &ops::mul_scalar(&s, lambda0)?)
            }
        },
        seed,
    )?;
    out.push(record("loss_total", COMPONENT_TOLERANCE, report));
    Ok(out)
}

/// Primitives followed by composite components.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<ComponentCheck>> {
    let mut out = check_primitives(seed)?;
    out.extend(check_components(seed)?);
    Ok(out)
}
