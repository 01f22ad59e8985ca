//! The joint 2D/3D patch optimization loop.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{detection_loss_grad, total_loss, tv_grad, tv_normalizer, BranchSample, LossBreakdown, LossWeights};
use super::optim::{patch_step, PatchOptimizer, StepMode};
use super::patch::{Patch, DEFAULT_PATCH_SIZE};
use super::render3d::{render3d, sample_setup3d, Scene3DConfig};
use super::transform::{apply_2d, TransformRanges};
use crate::bbox::BoundingBox;
use crate::detect::{input_gradient, Detection, DetectorModel, ShakedropCfg};
use crate::error::{Error, Result};
use crate::geometry::Humanoid;
use crate::image::Image;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub patch: u64,
    pub geometry: u64,
    pub scene: u64,
    pub shakedrop: u64,
    pub transforms: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            patch: 1,
            geometry: 2,
            scene: 3,
            shakedrop: 4,
            transforms: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub rounds: usize,
    pub batch2d: usize,
    pub batch3d: usize,
    pub weights: LossWeights,
    /// IoU threshold of the detection loss.
    pub tau: f64,
    pub mode: StepMode,
    pub step: f64,
    pub patch_size: usize,
    pub transforms: TransformRanges,
    pub scene3d: Scene3DConfig,
    pub shakedrop: ShakedropCfg,
    pub seeds: Seeds,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            rounds: 800,
            batch2d: 8,
            batch3d: 8,
            weights: LossWeights::default(),
            tau: 0.5,
            mode: StepMode::Adaptive,
            step: 0.01,
            patch_size: DEFAULT_PATCH_SIZE,
            transforms: TransformRanges::default(),
            scene3d: Scene3DConfig::default(),
            shakedrop: ShakedropCfg::default(),
            seeds: Seeds::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.transforms.validate()?;
        self.shakedrop.validate()?;
        self.scene3d.relight.validate()?;
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} outside (0,1)", self.tau)));
        }
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if self.batch2d == 0 && self.batch3d == 0 {
            return Err(Error::Config("at least one branch needs a nonzero batch".into()));
        }
        Ok(())
    }
}

/// A person image with one ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonSample {
    pub image: Image,
    pub gt: BoundingBox,
}

/// Where the training loop draws its inputs: person images for the 2D
/// branch and person-free backgrounds for the 3D branch.
pub trait TrainSource {
    fn n_persons(&self) -> usize;
    fn person(&self, i: usize) -> Result<Cow<'_, PersonSample>>;
    fn n_backgrounds(&self) -> usize;
    fn background(&self, i: usize) -> Result<Cow<'_, Image>>;
}

/// In-memory [`TrainSource`].
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub persons: Vec<PersonSample>,
    pub backgrounds: Vec<Image>,
}

impl TrainSource for TrainData {
    fn n_persons(&self) -> usize {
        self.persons.len()
    }

    fn person(&self, i: usize) -> Result<Cow<'_, PersonSample>> {
        Ok(Cow::Borrowed(&self.persons[i]))
    }

    fn n_backgrounds(&self) -> usize {
        self.backgrounds.len()
    }

    fn background(&self, i: usize) -> Result<Cow<'_, Image>> {
        Ok(Cow::Borrowed(&self.backgrounds[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLoss {
    pub round: usize,
    #[serde(rename = "L_det2d")]
    pub det2d: f64,
    #[serde(rename = "L_det3d")]
    pub det3d: f64,
    #[serde(rename = "L_tv")]
    pub tv: f64,
    pub total: f64,
}

impl RoundLoss {
    fn new(round: usize, b: &LossBreakdown) -> Self {
        RoundLoss {
            round,
            det2d: b.det2d,
            det3d: b.det3d,
            tv: b.tv,
            total: b.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub patch: Patch,
    pub trace: Vec<RoundLoss>,
}

const BRANCH_2D: u64 = 2;
const BRANCH_3D: u64 = 3;

fn loss_fn(gt: BoundingBox, tau: f64) -> impl Fn(&[Detection]) -> (f64, Vec<f64>) {
    move |dets: &[Detection]| detection_loss_grad(dets, &gt, tau)
}

/// Evaluates one round: total loss, its texel gradient, and the branch samples.
pub fn round_gradient(
    round: usize,
    patch: &Patch,
    data: &dyn TrainSource,
    detector: &dyn DetectorModel,
    model: &Humanoid,
    cfg: &AttackConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; patch.texels.data().len()];
    let r = round as u64;
    let mut s2 = Vec::with_capacity(cfg.batch2d);
    if cfg.batch2d > 0 && cfg.weights.w_det2d > 0.0 {
        if data.n_persons() == 0 {
            return Err(Error::domain("2D branch has no person images"));
        }
        let scale = cfg.weights.w_det2d / cfg.batch2d as f64;
        for k in 0..cfg.batch2d as u64 {
            let mut rng = seed::stream(cfg.seeds.transforms, &[r, BRANCH_2D, k]);
            let sample = data.person(rng.random_range(0..data.n_persons()))?;
            let t = cfg.transforms.sample(patch, &sample.gt, &mut rng);
            let applied = apply_2d(patch, &sample.image, &sample.gt, &t)?;
            let mut sd = seed::stream(cfg.seeds.shakedrop, &[r, BRANCH_2D, k]);
            let out = input_gradient(detector, &applied.image, &loss_fn(sample.gt, cfg.tau), &cfg.shakedrop, &mut sd)?;
            let g: Vec<f64> = out.gradient.data().iter().map(|v| v * scale).collect();
            applied.backward(&g, &mut grad);
            s2.push(BranchSample {
                detections: out.detections,
                gt: sample.gt,
            });
        }
    }
    let mut s3 = Vec::with_capacity(cfg.batch3d);
    if cfg.batch3d > 0 && cfg.weights.w_det3d > 0.0 {
        if data.n_backgrounds() == 0 {
            return Err(Error::domain("3D branch has no backgrounds"));
        }
        let scale = cfg.weights.w_det3d / cfg.batch3d as f64;
        for k in 0..cfg.batch3d as u64 {
            let mut rng = seed::stream(cfg.seeds.scene, &[r, BRANCH_3D, k]);
            let bg = data.background(rng.random_range(0..data.n_backgrounds()))?;
            let geo = seed::derive_seed(cfg.seeds.geometry, &[r, k]);
            let setup = sample_setup3d(&bg, model, &cfg.scene3d, &mut rng, geo)?;
            let rendered = render3d(&setup, model, patch, &cfg.scene3d)?;
            let mut sd = seed::stream(cfg.seeds.shakedrop, &[r, BRANCH_3D, k]);
            let out = input_gradient(detector, &rendered.image, &loss_fn(rendered.gt, cfg.tau), &cfg.shakedrop, &mut sd)?;
            let g: Vec<f64> = out.gradient.data().iter().map(|v| v * scale).collect();
            rendered.backward(&g, &mut grad);
            s3.push(BranchSample {
                detections: out.detections,
                gt: rendered.gt,
            });
        }
    }
    let breakdown = total_loss(&s2, &s3, patch, &cfg.weights, cfg.tau)?;
    if cfg.weights.w_tv > 0.0 {
        tv_grad(&patch.texels, cfg.weights.w_tv / tv_normalizer(patch), &mut grad);
    }
    Ok((breakdown, grad))
}

/// Trains from `initial` (or a seeded noise patch) until the patch has seen
/// `cfg.rounds` rounds. A resumed patch continues from its iteration count.
/// `on_round` sees every trace row and the patch after its update.
pub fn train(
    data: &dyn TrainSource,
    detector: &dyn DetectorModel,
    model: &Humanoid,
    cfg: &AttackConfig,
    initial: Option<Patch>,
    mut on_round: impl FnMut(&RoundLoss, &Patch),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut patch = match initial {
        Some(p) => p,
        None => Patch::random(cfg.patch_size, cfg.patch_size, cfg.seeds.patch)?,
    };
    let mut opt = PatchOptimizer::new(cfg.mode, cfg.step, patch.texels.data().len())?;
    let mut trace = Vec::with_capacity(cfg.rounds.saturating_sub(patch.iteration as usize));
    let start = patch.iteration as usize;
    for round in start..cfg.rounds.max(start) {
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let (breakdown, grad) = round_gradient(round, &patch, data, detector, model, cfg).map_err(wrap)?;
        patch_step(&mut patch, &grad, &mut opt).map_err(wrap)?;
        let row = RoundLoss::new(round, &breakdown);
        log::info!(
            "round {round}: det2d {:.4} det3d {:.4} tv {:.4} total {:.4}",
            row.det2d,
            row.det3d,
            row.tv,
            row.total
        );
        on_round(&row, &patch);
        trace.push(row);
    }
    Ok(TrainOutcome { patch, trace })
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace<R: std::io::Read>(r: R) -> Result<Vec<RoundLoss>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes a loss trace as CSV with a header row.
pub fn write_trace<W: std::io::Write>(trace: &[RoundLoss], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in trace {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}
