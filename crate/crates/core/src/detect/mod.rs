//! Differentiable person detection.
//!
//! [`DetectorModel`] abstracts a detector whose confidences can be
//! differentiated with respect to the input image. The bundled
//! [`ToyDetector`] implements it, and [`input_gradient`] is the entry point
//! the attack uses.

mod conv;
pub mod shakedrop;
mod toy;
pub mod train;
mod weights;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use conv::{relu_backward, Conv2d, ConvGrad, Tensor};
pub use shakedrop::{
    draw_backward, draw_forward, fusion_coefficient, shakedrop_backward, shakedrop_forward, ShakeState,
    ShakedropCfg,
};
pub use toy::{ToyDetector, ToyDetectorConfig, ToyGrads, Trace, HEAD_CHANNELS};
pub use train::{train_toy_detector, validation_stats, DetectorTrainConfig, DetectorTrainReport, LabelledInput};
pub use weights::{bundled_detector, load_weights, quantize, read_weights, save_weights, write_weights};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;

/// Class id of the person class.
pub const PERSON: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub label: u32,
    /// Grid cell that produced the detection.
    pub cell: usize,
}

/// A scalar objective over detections: returns the value and its derivative
/// with respect to each detection's confidence.
pub type DetectionObjective<'a> = &'a dyn Fn(&[Detection]) -> (f64, Vec<f64>);

#[derive(Debug, Clone)]
pub struct InputGradient {
    pub loss: f64,
    pub detections: Vec<Detection>,
    pub gradient: Image,
}

pub trait DetectorModel: Send + Sync {
    fn input_size(&self) -> usize;

    fn residual_blocks(&self) -> usize;

    /// Deterministic inference without shakedrop.
    fn detect(&self, image: &Image) -> Result<Vec<Detection>>;

    /// Detection, loss, and input gradient in one pass, with shakedrop drawn
    /// from `rng` when enabled.
    fn detect_with_gradient(
        &self,
        image: &Image,
        loss: DetectionObjective<'_>,
        shakedrop: &ShakedropCfg,
        rng: &mut dyn RngCore,
    ) -> Result<InputGradient>;
}

impl DetectorModel for ToyDetector {
    fn input_size(&self) -> usize {
        ToyDetector::input_size(self)
    }

    fn residual_blocks(&self) -> usize {
        ToyDetector::residual_blocks(self)
    }

    fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        ToyDetector::detect(self, image)
    }

    fn detect_with_gradient(
        &self,
        image: &Image,
        loss: DetectionObjective<'_>,
        shakedrop: &ShakedropCfg,
        rng: &mut dyn RngCore,
    ) -> Result<InputGradient> {
        let (loss, detections, gradient) = ToyDetector::detect_with_gradient(self, image, loss, shakedrop, rng)?;
        Ok(InputGradient {
            loss,
            detections,
            gradient,
        })
    }
}

/// d(loss)/d(image) with shakedrop applied per residual block.
pub fn input_gradient(
    model: &dyn DetectorModel,
    image: &Image,
    loss: DetectionObjective<'_>,
    shakedrop: &ShakedropCfg,
    rng: &mut dyn RngCore,
) -> Result<InputGradient> {
    let out = model.detect_with_gradient(image, loss, shakedrop, rng)?;
    if !out.loss.is_finite() {
        return Err(Error::numerical("detection loss is not finite"));
    }
    if let Some(i) = out.gradient.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("input gradient is not finite at value {i}")));
    }
    Ok(out)
}

/// Greedy non-maximum suppression. Output is sorted by descending confidence
/// (ties by cell index).
pub fn nms(mut dets: Vec<Detection>, iou_thres: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.cell.cmp(&b.cell)));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| k.label != d.label || k.bbox.iou(&d.bbox) <= iou_thres) {
            kept.push(d);
        }
    }
    kept
}
