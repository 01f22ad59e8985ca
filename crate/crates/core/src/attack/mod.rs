//! Patch optimization: the patch itself, 2D pasting, 3D rendering, losses,
//! update rules, and the training loop.

mod loss;
mod optim;
mod patch;
mod render3d;
mod train;
mod transform;

pub use loss::{
    best_candidate, detection_loss, detection_loss_grad, total_loss, tv_grad, tv_loss, tv_normalizer,
    BranchSample, LossBreakdown, LossWeights,
};
pub use optim::{patch_step, PatchOptimizer, StepMode, ADAM_EPS, BETA1, BETA2};
pub use patch::{Patch, PatchMeta, DEFAULT_PATCH_SIZE};
pub use render3d::{render3d, sample_setup3d, Render3D, Scene3DConfig, Setup3D};
pub use train::{
    round_gradient, train, read_trace, write_trace, AttackConfig, PersonSample, RoundLoss, Seeds, TrainData, TrainOutcome,
    TrainSource,
};
pub use transform::{apply_2d, Applied2D, Transform2D, TransformRanges, OCCLUSION_GRAY};
