//! Training loss on TSDFs and detector-free evaluation metrics.

use crate::error::{dim_err, Error, Result};
use crate::fields::{BinaryMask, ScalarField, Tsdf};
use crate::tsdf;

/// Relaxation of the soft Heaviside inside the BCE term.
pub const LOSS_EPS: f64 = 0.1;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

/// Weights of the initial and final TSDF losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_initial: f64,
    pub w_final: f64,
}

impl LossWeights {
    /// Urban-scene configuration.
    pub const CITYSCAPES: LossWeights = LossWeights { w_initial: 1.0, w_final: 5.0 };
    /// Common-objects configuration.
    pub const COCO: LossWeights = LossWeights { w_initial: 0.2, w_final: 1.0 };

    pub fn new(w_initial: f64, w_final: f64) -> Result<Self> {
        if !(w_initial >= 0.0 && w_final >= 0.0 && w_initial.is_finite() && w_final.is_finite()) {
            return Err(Error::Parameter(format!("loss weights must be nonnegative, got ({w_initial}, {w_final})")));
        }
        Ok(Self { w_initial, w_final })
    }
}

fn same_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return dim_err(format!("{what}: shapes {a:?} and {b:?} differ"));
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    if p < BCE_CLAMP {
        (BCE_CLAMP, true)
    } else if p > 1.0 - BCE_CLAMP {
        (1.0 - BCE_CLAMP, true)
    } else {
        (p, false)
    }
}

/// Mean absolute error and mean binary cross-entropy, reported separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsdfLossTerms {
    pub l1: f64,
    pub bce: f64,
}

impl TsdfLossTerms {
    pub fn total(&self) -> f64 {
        self.l1 + self.bce
    }
}

pub fn tsdf_loss_terms(phi: &ScalarField, gt: &Tsdf, mask: &BinaryMask) -> Result<TsdfLossTerms> {
    same_shape(phi.shape(), gt.shape(), "tsdf loss")?;
    same_shape(phi.shape(), mask.shape(), "tsdf loss")?;
    let pixels = phi.data().iter().zip(gt.field().data()).zip(mask.data());
    let l1 = shifted_mean(pixels.clone().map(|((&z, &g), _)| (z - g).abs()));
    let bce = shifted_mean(pixels.map(|((&z, _), &m)| {
        let p = if m == 1 { tsdf::heaviside(z, LOSS_EPS) } else { tsdf::heaviside(-z, LOSS_EPS) };
        -clamp_prob(p).0.ln()
    }));
    Ok(TsdfLossTerms { l1, bce })
}

// Mean taken relative to the first term; exact when all terms are equal.
fn shifted_mean(mut terms: impl Iterator<Item = f64>) -> f64 {
    let Some(first) = terms.next() else { return 0.0 };
    let (mut sum, mut n) = (0.0, 1.0);
    for t in terms {
        sum += t - first;
        n += 1.0;
    }
    first + sum / n
}

/// `mean |phi - phi_gt| + mean BCE(H_0.1(phi), mask)`.
pub fn tsdf_loss(phi: &ScalarField, gt: &Tsdf, mask: &BinaryMask) -> Result<f64> {
    tsdf_loss_terms(phi, gt, mask).map(|t| t.total())
}

/// Gradient of [`tsdf_loss`] in `phi`. The L1 kink contributes zero where
/// `phi == phi_gt`; clamped probabilities contribute zero.
pub fn tsdf_loss_gradient(phi: &ScalarField, gt: &Tsdf, mask: &BinaryMask) -> Result<ScalarField> {
    same_shape(phi.shape(), gt.shape(), "tsdf loss")?;
    same_shape(phi.shape(), mask.shape(), "tsdf loss")?;
    let n = phi.len() as f64;
    let grad = phi
        .data()
        .iter()
        .zip(gt.field().data())
        .zip(mask.data())
        .map(|((&z, &g), &m)| {
            let l1 = if z > g {
                1.0
            } else if z < g {
                -1.0
            } else {
                0.0
            };
            let dh = tsdf::heaviside_dz(z, LOSS_EPS);
            let bce = if m == 1 {
                let (p, clamped) = clamp_prob(tsdf::heaviside(z, LOSS_EPS));
                if clamped { 0.0 } else { -dh / p }
            } else {
                let (q, clamped) = clamp_prob(tsdf::heaviside(-z, LOSS_EPS));
                if clamped { 0.0 } else { dh / q }
            };
            (l1 + bce) / n
        })
        .collect();
    ScalarField::from_vec(phi.height(), phi.width(), grad)
}

/// Weighted sum of the TSDF loss on the initial and final level sets.
pub fn combined_loss(
    phi0: &ScalarField,
    phi_n: &ScalarField,
    gt: &Tsdf,
    mask: &BinaryMask,
    w: LossWeights,
) -> Result<f64> {
    Ok(w.w_initial * tsdf_loss(phi0, gt, mask)? + w.w_final * tsdf_loss(phi_n, gt, mask)?)
}

/// A differentiable scalar function of the final level set.
pub trait PhiLoss {
    fn value(&self, phi: &ScalarField) -> Result<f64>;
    fn gradient(&self, phi: &ScalarField) -> Result<ScalarField>;
}

/// [`tsdf_loss`] against fixed targets.
#[derive(Clone, Debug)]
pub struct TsdfLoss {
    pub gt: Tsdf,
    pub mask: BinaryMask,
}

impl PhiLoss for TsdfLoss {
    fn value(&self, phi: &ScalarField) -> Result<f64> {
        tsdf_loss(phi, &self.gt, &self.mask)
    }

    fn gradient(&self, phi: &ScalarField) -> Result<ScalarField> {
        tsdf_loss_gradient(phi, &self.gt, &self.mask)
    }
}

/// `sum phi`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SumLoss;

impl PhiLoss for SumLoss {
    fn value(&self, phi: &ScalarField) -> Result<f64> {
        Ok(phi.data().iter().sum())
    }

    fn gradient(&self, phi: &ScalarField) -> Result<ScalarField> {
        ScalarField::new(phi.height(), phi.width(), 1.0)
    }
}

/// Smooth probe `mean(w * phi + phi^2 / 2)` used for gradient checking.
#[derive(Clone, Debug)]
pub struct ProbeLoss {
    pub weights: ScalarField,
}

impl PhiLoss for ProbeLoss {
    fn value(&self, phi: &ScalarField) -> Result<f64> {
        same_shape(phi.shape(), self.weights.shape(), "probe loss")?;
        let s: f64 = phi.data().iter().zip(self.weights.data()).map(|(z, w)| w * z + 0.5 * z * z).sum();
        Ok(s / phi.len() as f64)
    }

    fn gradient(&self, phi: &ScalarField) -> Result<ScalarField> {
        same_shape(phi.shape(), self.weights.shape(), "probe loss")?;
        let n = phi.len() as f64;
        ScalarField::from_vec(
            phi.height(),
            phi.width(),
            phi.data().iter().zip(self.weights.data()).map(|(z, w)| (w + z) / n).collect(),
        )
    }
}

/// Intersection over union; two empty masks score 1.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    same_shape(a.shape(), b.shape(), "mask iou")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mask pixels with a 4-neighbor of the opposite value.
pub fn boundary_pixels(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.shape();
    BinaryMask::from_fn(h, w, |r, c| {
        let v = mask.get(r, c);
        (r > 0 && mask.get(r - 1, c) != v)
            || (r + 1 < h && mask.get(r + 1, c) != v)
            || (c > 0 && mask.get(r, c - 1) != v)
            || (c + 1 < w && mask.get(r, c + 1) != v)
    })
    .expect("shape inherited from mask")
}

// Fraction of `from` pixels with a `to` pixel within Euclidean distance `tol`.
fn matched_fraction(from: &BinaryMask, to: &BinaryMask, tol: f64) -> f64 {
    let (h, w) = from.shape();
    let reach = tol.floor() as isize;
    let tol2 = tol * tol;
    let (mut total, mut hit) = (0usize, 0usize);
    for r in 0..h {
        for c in 0..w {
            if !from.get(r, c) {
                continue;
            }
            total += 1;
            'search: for dr in -reach..=reach {
                for dc in -reach..=reach {
                    if ((dr * dr + dc * dc) as f64) > tol2 {
                        continue;
                    }
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && to.get(rr as usize, cc as usize) {
                        hit += 1;
                        break 'search;
                    }
                }
            }
        }
    }
    hit as f64 / total as f64
}

/// Boundary F-measure with a pixel distance tolerance.
///
/// Both boundaries empty scores 1; exactly one empty scores 0.
pub fn boundary_f1(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> Result<f64> {
    same_shape(pred.shape(), gt.shape(), "boundary f1")?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::Parameter(format!("tolerance must be nonnegative, got {tol}")));
    }
    let bp = boundary_pixels(pred);
    let bg = boundary_pixels(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&bp, &bg, tol);
    let recall = matched_fraction(&bg, &bp, tol);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> impl Iterator<Item = f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64)
}

/// Per-instance matched AP: mean over IoU thresholds of the fraction of
/// instances whose IoU reaches the threshold. No detection matching.
pub fn matched_ap(ious: &[f64]) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    let n = ious.len() as f64;
    let per: Vec<f64> = iou_thresholds().map(|t| ious.iter().filter(|&&v| v >= t - 1e-12).count() as f64 / n).collect();
    per.iter().sum::<f64>() / per.len() as f64
}
