//! Training objective: median/MAD ground-truth normalisation, closed-form
//! least-squares alignment, the scale-shift-invariant depth loss, Dice and
//! Focal segmentation losses, and their dynamically weighted sum.
//!
//! Every loss is built from [`crate::tensor::ops`] primitives, so gradients
//! flow wherever an input is on a graph. Masks are `0/1` tensors with the
//! shape of the map they gate.

use crate::error::{Error, Result};
use crate::tensor::{ops, Tensor};

/// Smoothing constant of the Dice ratio.
pub const DICE_EPSILON: f64 = 1e-6;
/// Lower clamp of the true-class probability inside the Focal loss.
pub const FOCAL_MIN_PROBABILITY: f64 = 1e-7;

/// Ground truth shifted by its median and scaled by its mean absolute
/// deviation over valid pixels.
#[derive(Debug, Clone)]
pub struct NormalizedDepth {
    /// `(d − shift) / scale` on valid pixels, zero elsewhere.
    pub values: Tensor,
    /// Validity as a `0/1` tensor.
    pub mask: Tensor,
    pub shift: f64,
    pub scale: f64,
}

impl NormalizedDepth {
    pub fn valid_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0.0).count()
    }
}

fn resolve_mask(d: &Tensor, mask: Option<&Tensor>) -> Result<Vec<bool>> {
    match mask {
        Some(m) if m.shape() != d.shape() => Err(Error::shape(
            "mask",
            format!("mask {:?} does not match map {:?}", m.shape(), d.shape()),
        )),
        Some(m) => Ok(m.data().iter().zip(d.data()).map(|(&m, v)| m != 0.0 && v.is_finite()).collect()),
        None => Ok(d.data().iter().map(|v| v.is_finite()).collect()),
    }
}

/// Median of a non-empty slice; even counts average the two central values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn normalize_gt(d: &Tensor, mask: Option<&Tensor>) -> Result<NormalizedDepth> {
    let valid = resolve_mask(d, mask)?;
    let vals: Vec<f64> = d.data().iter().zip(&valid).filter(|(_, &ok)| ok).map(|(&v, _)| v).collect();
    if vals.len() < 2 {
        return Err(Error::DegenerateGroundTruth(format!("{} valid pixel(s), need at least 2", vals.len())));
    }
    let shift = median(&vals);
    let scale = vals.iter().map(|v| (v - shift).abs()).sum::<f64>() / vals.len() as f64;
    if !(scale > 0.0) {
        return Err(Error::DegenerateGroundTruth("all valid depths are equal".into()));
    }
    let values = d
        .data()
        .iter()
        .zip(&valid)
        .map(|(&v, &ok)| if ok { (v - shift) / scale } else { 0.0 })
        .collect();
    let mask = valid.iter().map(|&ok| if ok { 1.0 } else { 0.0 }).collect();
    Ok(NormalizedDepth {
        values: Tensor::new(d.shape().to_vec(), values)?,
        mask: Tensor::new(d.shape().to_vec(), mask)?,
        shift,
        scale,
    })
}

/// Result of [`align_lsq`]. `scale` and `shift` are single-element tensors
/// that stay on the graph of `d_hat`.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub aligned: Tensor,
    pub scale: Tensor,
    pub shift: Tensor,
    /// The prediction was constant on the mask; only a shift was fitted.
    pub degenerate: bool,
}

impl Alignment {
    pub fn scale_value(&self) -> f64 {
        self.scale.data()[0]
    }

    pub fn shift_value(&self) -> f64 {
        self.shift.data()[0]
    }
}

/// Least-squares `scale·d̂ + shift ≈ d*` over the mask, in closed form.
///
/// The 2×2 normal equations are solved after centring both signals, which
/// keeps the solve well conditioned for large offsets. A constant `d̂`
/// makes the system singular; the fit then falls back to `scale = 1` and
/// the shift that matches the means, and `degenerate` is set.
pub fn align_lsq(d_star: &Tensor, d_hat: &Tensor, mask: Option<&Tensor>) -> Result<Alignment> {
    align_lsq_with(d_star, d_hat, mask, false)
}

/// [`align_lsq`] with an option to treat the fitted scale and shift as
/// constants during differentiation.
pub fn align_lsq_with(d_star: &Tensor, d_hat: &Tensor, mask: Option<&Tensor>, detach: bool) -> Result<Alignment> {
    if d_star.shape() != d_hat.shape() {
        return Err(Error::shape("align_lsq", format!("{:?} vs {:?}", d_star.shape(), d_hat.shape())));
    }
    let weights = match mask {
        Some(m) if m.shape() != d_hat.shape() => {
            return Err(Error::shape("align_lsq", format!("mask {:?} vs map {:?}", m.shape(), d_hat.shape())))
        }
        Some(m) => m.detach(),
        None => Tensor::full(d_hat.shape().to_vec(), 1.0)?,
    };
    let n: f64 = weights.data().iter().sum();
    if n < 2.0 {
        return Err(Error::DegenerateGroundTruth(format!("{n} valid pixel(s), need at least 2")));
    }
    for (name, t) in [("prediction", d_hat), ("target", d_star)] {
        if !t.all_finite() {
            return Err(Error::NonFinite(format!("align_lsq {name} contains non-finite values")));
        }
    }

    let weighted_mean = |x: &Tensor| -> Result<Tensor> { ops::mul_scalar(&ops::sum_all(&ops::mul(&weights, x)?)?, 1.0 / n) };
    let mean_hat = weighted_mean(d_hat)?;
    let mean_star = weighted_mean(d_star)?;
    let centred_hat = ops::add_broadcast(d_hat, &ops::mul_scalar(&mean_hat, -1.0)?)?;
    let centred_star = ops::add_broadcast(d_star, &ops::mul_scalar(&mean_star, -1.0)?)?;
    let masked_hat = ops::mul(&weights, &centred_hat)?;
    let cov = ops::sum_all(&ops::mul(&masked_hat, &centred_star)?)?;
    let var = ops::sum_all(&ops::mul(&masked_hat, &centred_hat)?)?;

    let energy: f64 = d_hat.data().iter().zip(weights.data()).map(|(v, w)| w * v * v).sum();
    let degenerate = !(var.data()[0] > 1e-20 * energy);
    let (mut scale, mut shift) = if degenerate {
        (Tensor::scalar(1.0), ops::sub(&mean_star, &mean_hat)?)
    } else {
        let scale = ops::div(&cov, &var)?;
        let shift = ops::sub(&mean_star, &ops::mul(&scale, &mean_hat)?)?;
        (scale, shift)
    };
    if detach {
        scale = scale.detach();
        shift = shift.detach();
    }
    let aligned = ops::add_broadcast(&ops::scale_by(d_hat, &scale)?, &shift)?;
    Ok(Alignment { aligned, scale, shift, degenerate })
}

#[derive(Debug, Clone)]
pub struct SsiLoss {
    pub value: Tensor,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SsiOptions {
    /// Stop gradients through the fitted scale and shift.
    pub detach_alignment: bool,
}

/// Mean squared error between normalised ground truth and the aligned
/// prediction, over valid pixels.
pub fn loss_ssi(d_star: &NormalizedDepth, d_hat: &Tensor, mask: Option<&Tensor>) -> Result<SsiLoss> {
    loss_ssi_with(d_star, d_hat, mask, SsiOptions::default())
}

pub fn loss_ssi_with(d_star: &NormalizedDepth, d_hat: &Tensor, mask: Option<&Tensor>, options: SsiOptions) -> Result<SsiLoss> {
    if d_star.values.shape() != d_hat.shape() {
        return Err(Error::shape("loss_ssi", format!("{:?} vs {:?}", d_star.values.shape(), d_hat.shape())));
    }
    let weights = match mask {
        Some(m) => ops::mul(&d_star.mask, &m.detach())?,
        None => d_star.mask.clone(),
    };
    let n: f64 = weights.data().iter().sum();
    let alignment = align_lsq_with(&d_star.values, d_hat, Some(&weights), options.detach_alignment)?;
    let residual = ops::mul(&weights, &ops::sub(&alignment.aligned, &d_star.values)?)?;
    let value = ops::mul_scalar(&ops::sum_all(&ops::mul(&residual, &residual)?)?, 1.0 / n)?;
    Ok(SsiLoss { value, degenerate: alignment.degenerate })
}

fn check_segmentation(op: &'static str, y_star: &Tensor, y_hat: &Tensor) -> Result<(usize, usize, usize)> {
    let dims = y_hat.chw().map_err(|_| Error::shape(op, format!("expected C×H×W, got {:?}", y_hat.shape())))?;
    if y_star.shape() != y_hat.shape() {
        return Err(Error::shape(op, format!("target {:?} vs prediction {:?}", y_star.shape(), y_hat.shape())));
    }
    Ok(dims)
}

/// `1 − mean_c (2·Σ y*·ŷ + ε) / (Σ (y* + ŷ) + ε)`.
pub fn loss_dice(y_star: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    let (_, h, w) = check_segmentation("loss_dice", y_star, y_hat)?;
    let pixels = (h * w) as f64;
    let overlap = ops::block_mean_pool(&ops::mul(y_star, y_hat)?, 1, 1)?;
    let mass = ops::block_mean_pool(&ops::add(y_star, y_hat)?, 1, 1)?;
    let numerator = ops::add_scalar(&ops::mul_scalar(&overlap, 2.0 * pixels)?, DICE_EPSILON)?;
    let denominator = ops::add_scalar(&ops::mul_scalar(&mass, pixels)?, DICE_EPSILON)?;
    let dice = ops::mean_all(&ops::div(&numerator, &denominator)?)?;
    ops::add_scalar(&ops::mul_scalar(&dice, -1.0)?, 1.0)
}

/// `−Σ_i (1 − p_i)² log p_i` with `p_i` the predicted probability of the
/// true class, clamped below at [`FOCAL_MIN_PROBABILITY`].
pub fn loss_focal(y_star: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    check_segmentation("loss_focal", y_star, y_hat)?;
    let p = ops::clamp_min(&ops::sum_channels(&ops::mul(y_star, y_hat)?)?, FOCAL_MIN_PROBABILITY)?;
    let miss = ops::add_scalar(&ops::mul_scalar(&p, -1.0)?, 1.0)?;
    let weighted = ops::mul(&ops::mul(&miss, &miss)?, &ops::log(&p)?)?;
    ops::mul_scalar(&ops::sum_all(&weighted)?, -1.0)
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: Tensor,
    /// The weight applied to the depth term, frozen for differentiation.
    pub lambda: f64,
    /// `ssi` was zero, so `lambda` fell back to 1.
    pub degenerate: bool,
}

/// `dice + focal + λ·ssi` with `λ = sg((dice + focal) / ssi)`.
pub fn loss_total(dice: &Tensor, focal: &Tensor, ssi: &Tensor) -> Result<TotalLoss> {
    let segmentation = ops::add(dice, focal)?;
    let ssi_value = ssi.item()?;
    let (lambda, degenerate) = if ssi_value > 0.0 && ssi_value.is_finite() {
        (ops::div(&segmentation, ssi)?.detach(), false)
    } else {
        (Tensor::scalar(1.0), true)
    };
    let value = ops::add(&segmentation, &ops::scale_by(ssi, &lambda)?)?;
    Ok(TotalLoss { value, lambda: lambda.item()?, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn normalizes_one_two_three() {
        let n = normalize_gt(&row(&[1.0, 2.0, 3.0]), None).unwrap();
        assert_eq!(n.shift, 2.0);
        assert!((n.scale - 2.0 / 3.0).abs() < 1e-15);
        for (a, b) in n.values.data().iter().zip([-1.5, 0.0, 1.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_input_is_a_fixed_point() {
        let n = normalize_gt(&row(&[-1.0, 0.0, 1.0, 2.0, -2.0]), None).unwrap();
        assert_eq!(n.shift, 0.0);
        assert_eq!(n.scale, 1.2);
        let n = normalize_gt(&row(&[-1.0, 1.0]), None).unwrap();
        assert_eq!((n.shift, n.scale), (0.0, 1.0));
        assert_eq!(n.values.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_ground_truth_is_degenerate() {
        assert!(matches!(normalize_gt(&row(&[5.0, 5.0, 5.0]), None), Err(Error::DegenerateGroundTruth(_))));
        let mask = row(&[1.0, 0.0, 0.0]);
        assert!(matches!(normalize_gt(&row(&[1.0, 2.0, 3.0]), Some(&mask)), Err(Error::DegenerateGroundTruth(_))));
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let mask = row(&[1.0, 1.0, 0.0, 1.0]);
        let n = normalize_gt(&row(&[1.0, 2.0, 1000.0, 3.0]), Some(&mask)).unwrap();
        assert_eq!(n.shift, 2.0);
        assert_eq!(n.values.data()[2], 0.0);
        assert_eq!(n.valid_count(), 3);
    }

    #[test]
    fn even_count_median_averages_the_middle() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn alignment_inverts_an_affine_map() {
        let d_star = row(&[-1.5, 0.0, 1.5, 0.25]);
        let d_hat = row(&[0.0, 3.0, 6.0, 3.5]);
        let a = align_lsq(&d_star, &d_hat, None).unwrap();
        assert!((a.scale_value() - 0.5).abs() < 1e-14);
        assert!((a.shift_value() + 1.5).abs() < 1e-14);
        for (x, y) in a.aligned.data().iter().zip(d_star.data()) {
            assert!((x - y).abs() < 1e-14);
        }
        let a = align_lsq(&d_star, &d_star, None).unwrap();
        assert_eq!((a.scale_value(), a.shift_value()), (1.0, 0.0));
    }

    #[test]
    fn constant_prediction_falls_back_to_shift_only() {
        let a = align_lsq(&row(&[0.0, 1.0, 5.0]), &row(&[2.0, 2.0, 2.0]), None).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.scale_value(), 1.0);
        assert_eq!(a.aligned.data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn dice_of_perfect_prediction_is_zero() {
        let y = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(loss_dice(&y, &y).unwrap().item().unwrap().abs() < 1e-6);
    }

    #[test]
    fn dice_of_an_even_split() {
        let y_star = Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]).unwrap();
        let y_hat = Tensor::new(vec![2, 1, 1], vec![0.5, 0.5]).unwrap();
        let got = loss_dice(&y_star, &y_hat).unwrap().item().unwrap();
        let class0 = (1.0 + DICE_EPSILON) / (1.5 + DICE_EPSILON);
        let class1 = DICE_EPSILON / (0.5 + DICE_EPSILON);
        assert!((got - (1.0 - (class0 + class1) / 2.0)).abs() < 1e-15);
        assert!((got - 2.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn focal_of_half_probability() {
        let y_star = Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]).unwrap();
        let y_hat = Tensor::new(vec![2, 1, 1], vec![0.5, 0.5]).unwrap();
        let got = loss_focal(&y_star, &y_hat).unwrap().item().unwrap();
        assert!((got - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((got - 0.173287).abs() < 1e-6);
        assert_eq!(loss_focal(&y_star, &y_star).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn segmentation_shapes_must_match() {
        let a = Tensor::<f64>::zeros(vec![2, 2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(vec![3, 2, 2]).unwrap();
        assert!(loss_dice(&a, &b).is_err());
        assert!(loss_focal(&a, &b).is_err());
    }

    #[test]
    fn total_balances_its_terms() {
        let t = loss_total(&Tensor::scalar(0.75), &Tensor::scalar(0.25), &Tensor::scalar(0.25)).unwrap();
        assert_eq!(t.lambda, 4.0);
        assert_eq!(t.value.item().unwrap(), 2.0);
        let t = loss_total(&Tensor::scalar(0.5), &Tensor::scalar(0.5), &Tensor::scalar(0.0)).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.lambda, 1.0);
    }

    #[test]
    fn lambda_carries_no_gradient() {
        let g = Graph::<f64>::new();
        let seg = g.leaf(&Tensor::scalar(3.0));
        let ssi = g.leaf(&Tensor::scalar(0.5));
        let t = loss_total(&seg, &Tensor::scalar(0.0), &ssi).unwrap();
        let grads = t.value.backward().unwrap();
        // With λ frozen: ∂/∂seg = 1, ∂/∂ssi = λ = 6.
        assert_eq!(grads.get(&seg).unwrap().unwrap().data(), &[1.0]);
        assert_eq!(grads.get(&ssi).unwrap().unwrap().data(), &[6.0]);
    }
}
