//! Supervised training of the toy detector on labelled scenes.
//!
//! Only used to produce the shipped fixture. Objectness is trained with a
//! weighted binary cross-entropy over all cells, where the cell containing a
//! ground-truth center is positive, and box offsets with squared error at
//! positive cells.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::Tensor;
use super::shakedrop::ShakedropCfg;
use super::toy::{ToyDetector, ToyDetectorConfig, ToyGrads};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub positive_weight: f64,
    pub box_weight: f64,
    pub recall_target: f64,
    pub min_epochs: usize,
    pub time_budget_secs: f64,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            epochs: 30,
            batch: 16,
            lr: 2e-3,
            positive_weight: 10.0,
            box_weight: 2.0,
            recall_target: 0.95,
            min_epochs: 20,
            time_budget_secs: 600.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainReport {
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// Validation recall (IoU 0.5, confidence 0.5) per epoch.
    pub recalls: Vec<f64>,
    /// Validation detections at confidence 0.5 that match no ground truth.
    pub false_positives: Vec<usize>,
    /// Epoch whose weights were kept (highest recall, then fewest false
    /// positives).
    pub best_epoch: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Target {
    cell: usize,
    tx: f64,
    ty: f64,
    tw: f64,
    th: f64,
}

fn targets(cfg: &ToyDetectorConfig, boxes: &[BoundingBox]) -> Vec<Target> {
    let stride = cfg.stride() as f64;
    let grid = cfg.grid();
    boxes
        .iter()
        .filter_map(|b| {
            let (cx, cy) = b.center();
            let j = (cx / stride).floor();
            let i = (cy / stride).floor();
            if j < 0.0 || i < 0.0 || j >= grid as f64 || i >= grid as f64 {
                return None;
            }
            let clampp = |v: f64| v.clamp(0.02, 0.98);
            Some(Target {
                cell: i as usize * grid + j as usize,
                tx: clampp(cx / stride - j),
                ty: clampp(cy / stride - i),
                tw: (b.width() / cfg.anchor[0]).ln(),
                th: (b.height() / cfg.anchor[1]).ln(),
            })
        })
        .collect()
}

/// Loss and head gradient for one image.
fn head_loss(head: &Tensor, tgts: &[Target], tc: &DetectorTrainConfig) -> (f64, Tensor) {
    let plane = head.h * head.w;
    let mut grad = head.zeros_like();
    let mut loss = 0.0;
    let norm = 1.0 / plane as f64;
    let mut positive = vec![false; plane];
    for t in tgts {
        positive[t.cell] = true;
    }
    for cell in 0..plane {
        let z = head.data[cell];
        let p = sigmoid(z);
        let (y, w) = if positive[cell] { (1.0, tc.positive_weight) } else { (0.0, 1.0) };
        // Stable BCE on logits.
        loss += w * norm * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
        grad.data[cell] += w * norm * (p - y);
    }
    for t in tgts {
        let bw = tc.box_weight * norm;
        for (ch, target, squash) in [(1, t.tx, true), (2, t.ty, true), (3, t.tw, false), (4, t.th, false)] {
            let z = head.data[ch * plane + t.cell];
            let (v, dv) = if squash {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            } else {
                (z, 1.0)
            };
            let r = v - target;
            loss += bw * r * r;
            grad.data[ch * plane + t.cell] += bw * 2.0 * r * dv;
        }
    }
    (loss, grad)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &ToyDetector) -> Self {
        let sizes: Vec<usize> = model
            .layers()
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ToyDetector, grads: &ToyGrads, lr: f64, scale: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (li, (layer, g)) in model.layers_mut().into_iter().zip(grads).enumerate() {
            for (slot, (params, gs)) in [(&mut layer.weight, &g.weight), (&mut layer.bias, &g.bias)]
                .into_iter()
                .enumerate()
            {
                let m = &mut self.m[2 * li + slot];
                let v = &mut self.v[2 * li + slot];
                for i in 0..params.len() {
                    let gi = gs[i] * scale;
                    m[i] = B1 * m[i] + (1.0 - B1) * gi;
                    v[i] = B2 * v[i] + (1.0 - B2) * gi * gi;
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// A pooled network input with its ground-truth boxes (in input pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledInput {
    pub input: Tensor,
    pub boxes: Vec<BoundingBox>,
}

impl LabelledInput {
    pub fn from_image(cfg: &ToyDetectorConfig, image: &Image, boxes: Vec<BoundingBox>) -> Result<Self> {
        Ok(LabelledInput {
            input: cfg.pool_image(image)?,
            boxes,
        })
    }
}

/// Recall at IoU 0.5 / confidence 0.5 and the count of unmatched confident
/// detections.
pub fn validation_stats(model: &ToyDetector, samples: &[LabelledInput]) -> Result<(f64, usize)> {
    let mut found = 0usize;
    let mut total = 0usize;
    let mut fp = 0usize;
    for LabelledInput { input, boxes } in samples {
        let dets: Vec<_> = model
            .detect_pooled(input)?
            .into_iter()
            .filter(|d| d.confidence >= 0.5)
            .collect();
        let mut used = vec![false; dets.len()];
        for b in boxes {
            total += 1;
            if let Some(i) = (0..dets.len()).find(|&i| !used[i] && dets[i].bbox.iou(b) >= 0.5) {
                used[i] = true;
                found += 1;
            }
        }
        fp += used.iter().filter(|u| !**u).count();
    }
    let recall = if total == 0 { 1.0 } else { found as f64 / total as f64 };
    Ok((recall, fp))
}

/// Trains a fresh detector. Inputs without boxes serve as negatives.
pub fn train_toy_detector(
    arch: ToyDetectorConfig,
    train: &[LabelledInput],
    validation: &[LabelledInput],
    tc: &DetectorTrainConfig,
) -> Result<(ToyDetector, DetectorTrainReport)> {
    if train.is_empty() {
        return Err(Error::domain("detector training set is empty"));
    }
    if tc.batch == 0 || !(tc.lr > 0.0) {
        return Err(Error::Config("detector training needs batch > 0 and lr > 0".into()));
    }
    let mut model = ToyDetector::new(arch, tc.seed)?;
    let tgts: Vec<Vec<Target>> = train.iter().map(|s| targets(model.config(), &s.boxes)).collect();
    let mut adam = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let off = ShakedropCfg::disabled();
    let mut report = DetectorTrainReport::default();
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ToyDetector)> = None;
    for epoch in 0..tc.epochs {
        // cosine decay to zero over the full schedule
        let lr = tc.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / tc.epochs as f64).cos());
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tc.batch) {
            let mut grads = model.zero_grads();
            for &i in chunk {
                let (head, trace) = model.forward_pooled(&train[i].input, &off, &mut rng);
                let (loss, dh) = head_loss(&head, &tgts[i], tc);
                epoch_loss += loss;
                model.backward_pooled(trace, &dh, &off, &mut rng, false, Some(&mut grads))?;
            }
            adam.step(&mut model, &grads, lr, 1.0 / chunk.len() as f64);
        }
        let mean = epoch_loss / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::numerical(format!("detector training diverged at epoch {epoch}")));
        }
        let (recall, fp) = validation_stats(&model, validation)?;
        log::info!("detector epoch {epoch}: loss {mean:.5} recall {recall:.3} fp {fp}");
        report.losses.push(mean);
        report.recalls.push(recall);
        report.false_positives.push(fp);
        report.epochs_run = epoch + 1;
        if best.as_ref().is_none_or(|(r, f, _)| recall > *r || (recall == *r && fp < *f)) {
            best = Some((recall, fp, model.clone()));
            report.best_epoch = epoch;
        }
        if epoch + 1 >= tc.min_epochs && recall >= tc.recall_target {
            break;
        }
        if start.elapsed().as_secs_f64() > tc.time_budget_secs {
            log::warn!("detector training stopped by the time budget after epoch {epoch}");
            break;
        }
    }
    let model = best.map(|(_, _, m)| m).unwrap_or(model);
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_loss_gradient_matches_finite_differences() {
        let cfg = ToyDetectorConfig::default();
        let grid = cfg.grid();
        let mut head = Tensor::zeros(5, grid, grid);
        for (i, v) in head.data.iter_mut().enumerate() {
            *v = ((i * 7919) % 97) as f64 / 40.0 - 1.2;
        }
        let b = BoundingBox::new(150.0, 60.0, 260.0, 350.0).unwrap();
        let t = targets(&cfg, &[b]);
        assert_eq!(t.len(), 1);
        let tc = DetectorTrainConfig::default();
        let (_, g) = head_loss(&head, &t, &tc);
        let plane = grid * grid;
        for idx in [t[0].cell, plane + t[0].cell, 4 * plane + t[0].cell, 3] {
            let mut up = head.clone();
            up.data[idx] += 1e-6;
            let mut dn = head.clone();
            dn.data[idx] -= 1e-6;
            let fd = (head_loss(&up, &t, &tc).0 - head_loss(&dn, &t, &tc).0) / 2e-6;
            assert!((fd - g.data[idx]).abs() < 1e-7, "{idx}: {fd} vs {}", g.data[idx]);
        }
    }
}
