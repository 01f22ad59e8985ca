//! Detection metrics: IoU, attack success, corpus reports, threshold
//! sweeps, and the occlusion protocol.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::{apply_2d, Patch, Transform2D};
use crate::bbox::BoundingBox;
use crate::detect::{Detection, DetectorModel, PERSON};
use crate::error::{Error, Result};
use crate::image::Image;

/// Patch side relative to the box height in the evaluation pipeline.
pub const EVAL_PATCH_FRACTION: f64 = 0.3;
/// Occluder area fraction of the robustness protocol (a 100x100 square on a
/// 300x300 patch).
pub const OCCLUSION_AREA: f64 = 1.0 / 9.0;
pub const PROTOCOL_PATCH_SIZE: usize = 300;
pub const DEFAULT_IOU_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_CONF_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

fn qualifies(d: &Detection, gt: &BoundingBox, t: &Thresholds) -> bool {
    d.label == PERSON && d.confidence >= t.conf && d.bbox.iou(gt) >= t.iou
}

/// True when no person detection reaches both thresholds against `gt`.
pub fn attack_success(detections: &[Detection], gt: &BoundingBox, t: &Thresholds) -> bool {
    !detections.iter().any(|d| qualifies(d, gt, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(rename = "iou_thres")]
    pub iou: f64,
    #[serde(rename = "conf_thres")]
    pub conf: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { iou: 0.5, conf: 0.5 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("IoU", self.iou), ("confidence", self.conf)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::domain(format!("{name} threshold {v} outside (0,1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub successes: usize,
    pub total: usize,
}

/// Set when a rate had a zero denominator and was reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub avg_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub asr: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub avg_confidence: f64,
    pub counts: Counts,
    pub thresholds: Thresholds,
    pub undefined: UndefinedFlags,
}

/// Detections of one image with its ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub detections: Vec<Detection>,
    pub gts: Vec<BoundingBox>,
}

/// An evaluation image with its ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub image: Image,
    pub boxes: Vec<BoundingBox>,
}

/// Greedy one-to-one matching by descending confidence. Returns `(tp, fp, fn)`.
fn match_counts(s: &Scored, t: &Thresholds) -> (usize, usize, usize) {
    let mut dets: Vec<&Detection> = s
        .detections
        .iter()
        .filter(|d| d.label == PERSON && d.confidence >= t.conf)
        .collect();
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut used = vec![false; s.gts.len()];
    let mut tp = 0;
    for d in &dets {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in s.gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let v = d.bbox.iou(gt);
            if v >= t.iou && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            tp += 1;
        }
    }
    (tp, dets.len() - tp, s.gts.len() - tp)
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den > 0.0 {
        (num / den, false)
    } else {
        (0.0, true)
    }
}

/// Report over already-scored images. A sample counts as a success when
/// every ground truth escapes detection.
pub fn evaluate_scored(scored: &[Scored], t: &Thresholds) -> Result<EvalReport> {
    t.validate()?;
    if scored.is_empty() {
        return Err(Error::domain("cannot evaluate an empty corpus"));
    }
    let mut c = Counts {
        total: scored.len(),
        ..Default::default()
    };
    let mut conf_sum = 0.0;
    let mut conf_n = 0usize;
    for s in scored {
        let (tp, fp, fn_) = match_counts(s, t);
        c.tp += tp;
        c.fp += fp;
        c.fn_ += fn_;
        if s.gts.iter().all(|gt| attack_success(&s.detections, gt, t)) {
            c.successes += 1;
        }
        for d in &s.detections {
            conf_sum += d.confidence;
            conf_n += 1;
        }
    }
    let (precision, p_undef) = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let (recall, r_undef) = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    let (f1, f_undef) = if p_undef || r_undef {
        (0.0, true)
    } else {
        ratio(2.0 * precision * recall, precision + recall)
    };
    let (avg_confidence, ac_undef) = ratio(conf_sum, conf_n as f64);
    Ok(EvalReport {
        asr: c.successes as f64 / c.total as f64,
        precision,
        recall,
        f1,
        avg_confidence,
        counts: c,
        thresholds: *t,
        undefined: UndefinedFlags {
            precision: p_undef,
            recall: r_undef,
            f1: f_undef,
            avg_confidence: ac_undef,
        },
    })
}

pub fn score_corpus(samples: &[EvalSample], detector: &dyn DetectorModel) -> Result<Vec<Scored>> {
    samples
        .iter()
        .map(|s| {
            Ok(Scored {
                detections: detector.detect(&s.image)?,
                gts: s.boxes.clone(),
            })
        })
        .collect()
}

pub fn evaluate_corpus(samples: &[EvalSample], detector: &dyn DetectorModel, t: &Thresholds) -> Result<EvalReport> {
    t.validate()?;
    if samples.is_empty() {
        return Err(Error::domain("cannot evaluate an empty corpus"));
    }
    evaluate_scored(&score_corpus(samples, detector)?, t)
}

/// One report per `(iou, conf)` pair, IoU-major.
pub fn sweep_scored(scored: &[Scored], iou_grid: &[f64], conf_grid: &[f64]) -> Result<Vec<EvalReport>> {
    if iou_grid.is_empty() || conf_grid.is_empty() {
        return Err(Error::domain("sweep grids must be nonempty"));
    }
    let mut out = Vec::with_capacity(iou_grid.len() * conf_grid.len());
    for &iou in iou_grid {
        for &conf in conf_grid {
            out.push(evaluate_scored(scored, &Thresholds { iou, conf })?);
        }
    }
    Ok(out)
}

pub fn sweep(
    samples: &[EvalSample],
    detector: &dyn DetectorModel,
    iou_grid: &[f64],
    conf_grid: &[f64],
) -> Result<Vec<EvalReport>> {
    if samples.is_empty() {
        return Err(Error::domain("cannot sweep an empty corpus"));
    }
    sweep_scored(&score_corpus(samples, detector)?, iou_grid, conf_grid)
}

/// One line of the long-format sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub iou_thres: f64,
    pub conf_thres: f64,
    pub asr: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub avg_confidence: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub successes: usize,
    pub total: usize,
}

/// Reads a table written by [`write_sweep_csv`].
pub fn read_sweep_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Long-format sweep table keyed by `(iou_thres, conf_thres)`.
pub fn write_sweep_csv<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(SweepRow {
            iou_thres: r.thresholds.iou,
            conf_thres: r.thresholds.conf,
            asr: r.asr,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            avg_confidence: r.avg_confidence,
            tp: r.counts.tp,
            fp: r.counts.fp,
            fn_: r.counts.fn_,
            successes: r.counts.successes,
            total: r.counts.total,
        })?;
    }
    out.flush().map_err(|e| Error::io("<sweep>", e))?;
    Ok(())
}

/// ASR grid with one row per confidence threshold and one `IoU=x` column per
/// IoU threshold.
pub fn write_asr_table<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut ious: Vec<f64> = Vec::new();
    let mut confs: Vec<f64> = Vec::new();
    for r in reports {
        if !ious.contains(&r.thresholds.iou) {
            ious.push(r.thresholds.iou);
        }
        if !confs.contains(&r.thresholds.conf) {
            confs.push(r.thresholds.conf);
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["conf_thres".to_string()];
    header.extend(ious.iter().map(|v| format!("IoU={v}")));
    out.write_record(&header)?;
    for &c in &confs {
        let mut row = vec![c.to_string()];
        for &i in &ious {
            let asr = reports
                .iter()
                .find(|r| r.thresholds.iou == i && r.thresholds.conf == c)
                .map_or(String::new(), |r| format!("{:.6}", r.asr));
            row.push(asr);
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<asr table>", e))?;
    Ok(())
}

/// The evaluation pipeline: the patch pasted undistorted at every ground
/// truth, sized to [`EVAL_PATCH_FRACTION`] of the box height.
pub fn apply_patch_standard(patch: &Patch, sample: &EvalSample, occlusion: Option<f64>) -> Result<EvalSample> {
    let mut image = sample.image.clone();
    for gt in &sample.boxes {
        let t = Transform2D {
            occlusion,
            ..Transform2D::fitted(patch, gt, EVAL_PATCH_FRACTION)
        };
        image = apply_2d(patch, &image, gt, &t)?.image;
    }
    Ok(EvalSample {
        image,
        boxes: sample.boxes.clone(),
    })
}

pub fn patched_corpus(patch: &Patch, samples: &[EvalSample], occlusion: Option<f64>) -> Result<Vec<EvalSample>> {
    samples.iter().map(|s| apply_patch_standard(patch, s, occlusion)).collect()
}

/// Evaluates the corpus wearing `patch` with its center gray-occluded.
pub fn occlusion_protocol(
    patch: &Patch,
    samples: &[EvalSample],
    detector: &dyn DetectorModel,
    t: &Thresholds,
) -> Result<EvalReport> {
    if (patch.width(), patch.height()) != (PROTOCOL_PATCH_SIZE, PROTOCOL_PATCH_SIZE) {
        log::warn!(
            "occlusion protocol expects a {0}x{0} patch, got {1}x{2}; occluding 1/9 of its area",
            PROTOCOL_PATCH_SIZE,
            patch.width(),
            patch.height()
        );
    }
    evaluate_corpus(&patched_corpus(patch, samples, Some(OCCLUSION_AREA))?, detector, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(b: BoundingBox, conf: f64) -> Detection {
        Detection {
            bbox: b,
            confidence: conf,
            label: PERSON,
            cell: 0,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &bx(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn success_predicate() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let t = Thresholds::default();
        assert!(attack_success(&[], &gt, &t));
        // IoU 0.6 via a shift: (10-s)/(10+s) = 0.6 → s = 2.5
        let d = det(bx(2.5, 0.0, 12.5, 10.0), 0.6);
        assert!((d.bbox.iou(&gt) - 0.6).abs() < 1e-12);
        assert!(!attack_success(&[d], &gt, &t));
    }

    #[test]
    fn degenerate_counts() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let s = Scored {
            detections: vec![det(gt, 0.9)],
            gts: vec![gt],
        };
        let r = evaluate_scored(&[s], &Thresholds::default()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.avg_confidence, r.asr), (1.0, 1.0, 1.0, 0.9, 0.0));
        let miss = Scored {
            detections: vec![],
            gts: vec![gt],
        };
        let r = evaluate_scored(&[miss], &Thresholds::default()).unwrap();
        assert_eq!((r.asr, r.recall), (1.0, 0.0));
        assert!(r.undefined.precision && r.undefined.f1 && r.undefined.avg_confidence);
        assert!(evaluate_scored(&[], &Thresholds::default()).is_err());
    }

    #[test]
    fn matching_is_one_to_one() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let s = Scored {
            detections: vec![det(gt, 0.9), det(bx(0.5, 0.0, 10.5, 10.0), 0.8)],
            gts: vec![gt],
        };
        let r = evaluate_scored(&[s], &Thresholds::default()).unwrap();
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (1, 1, 0));
    }

    #[test]
    fn asr_table_header() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let s = vec![Scored {
            detections: vec![det(gt, 0.6)],
            gts: vec![gt],
        }];
        let reports = sweep_scored(&s, &DEFAULT_IOU_GRID, &[0.5]).unwrap();
        let mut buf = Vec::new();
        write_asr_table(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("conf_thres,IoU=0.1,IoU=0.3,IoU=0.5,IoU=0.7,IoU=0.9\n"));
    }
}
