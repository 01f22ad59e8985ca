//! Detection, total-variation, and combined training losses.

use serde::{Deserialize, Serialize};

use super::patch::Patch;
use crate::bbox::BoundingBox;
use crate::detect::{Detection, PERSON};
use crate::error::{Error, Result};
use crate::image::Image;

/// Index of the highest-confidence person detection overlapping `gt` by at
/// least `tau`, ties broken by the earlier detection.
pub fn best_candidate(detections: &[Detection], gt: &BoundingBox, tau: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, d) in detections.iter().enumerate() {
        if d.label != PERSON || d.bbox.iou(gt) < tau {
            continue;
        }
        if best.is_none_or(|b| d.confidence > detections[b].confidence) {
            best = Some(i);
        }
    }
    best
}

/// Highest confidence among qualifying person detections, 0 when none qualify.
pub fn detection_loss(detections: &[Detection], gt: &BoundingBox, tau: f64) -> f64 {
    best_candidate(detections, gt, tau).map_or(0.0, |i| detections[i].confidence)
}

/// [`detection_loss`] with its derivative with respect to every confidence.
pub fn detection_loss_grad(detections: &[Detection], gt: &BoundingBox, tau: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; detections.len()];
    match best_candidate(detections, gt, tau) {
        Some(i) => {
            grad[i] = 1.0;
            (detections[i].confidence, grad)
        }
        None => (0.0, grad),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of absolute vertical and horizontal neighbor differences over all
/// channels.
pub fn tv_loss(texels: &Image) -> f64 {
    let (w, h) = texels.dims();
    let d = texels.data();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            for c in 0..3 {
                if y + 1 < h {
                    sum += (d[i + 3 * w + c] - d[i + c]).abs();
                }
                if x + 1 < w {
                    sum += (d[i + 3 + c] - d[i + c]).abs();
                }
            }
        }
    }
    sum
}

/// Subgradient of [`tv_loss`] (`sign(0) = 0`), accumulated with weight `scale`.
pub fn tv_grad(texels: &Image, scale: f64, grad: &mut [f64]) {
    let (w, h) = texels.dims();
    let d = texels.data();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            for c in 0..3 {
                if y + 1 < h {
                    let s = scale * sign(d[i + 3 * w + c] - d[i + c]);
                    grad[i + 3 * w + c] += s;
                    grad[i + c] -= s;
                }
                if x + 1 < w {
                    let s = scale * sign(d[i + 3 + c] - d[i + c]);
                    grad[i + 3 + c] += s;
                    grad[i + c] -= s;
                }
            }
        }
    }
}

/// Number of texel values, the normalizer applied to TV inside the total loss.
pub fn tv_normalizer(patch: &Patch) -> f64 {
    (patch.width() * patch.height() * 3) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_det2d: f64,
    pub w_det3d: f64,
    pub w_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_det2d: 1.0,
            w_det3d: 1.0,
            w_tv: 2.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_det2d, self.w_det3d, self.w_tv];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative with at least one positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Detections of one evaluated sample and the box they are judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSample {
    pub detections: Vec<Detection>,
    pub gt: BoundingBox,
}

/// Weighted loss terms. Detection terms are batch means; `tv` is the TV sum
/// divided by [`tv_normalizer`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub det2d: f64,
    pub det3d: f64,
    pub tv: f64,
    pub total: f64,
}

fn branch_mean(samples: &[BranchSample], tau: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| detection_loss(&s.detections, &s.gt, tau))
        .sum::<f64>()
        / samples.len() as f64
}

pub fn total_loss(
    sample2d: &[BranchSample],
    sample3d: &[BranchSample],
    patch: &Patch,
    weights: &LossWeights,
    tau: f64,
) -> Result<LossBreakdown> {
    weights.validate()?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::domain(format!("IoU threshold {tau} outside (0,1)")));
    }
    let det2d = branch_mean(sample2d, tau);
    let det3d = branch_mean(sample3d, tau);
    let tv = tv_loss(&patch.texels) / tv_normalizer(patch);
    Ok(LossBreakdown {
        det2d,
        det3d,
        tv,
        total: weights.w_det2d * det2d + weights.w_det3d * det3d + weights.w_tv * tv,
    })
}
