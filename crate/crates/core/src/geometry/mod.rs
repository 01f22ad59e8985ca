//! Garment geometry: meshes, stress, control points, and stochastic
//! thin-plate-spline deformation.

mod control;
mod humanoid;
mod mesh;
mod stress;
mod tps;

pub use control::{control_target, select_control_points, ControlPointSet};
pub use humanoid::{
    humanoid, panel_uv, BodyPart, Humanoid, MODEL_HEIGHT, PANEL_CENTER_Y, PANEL_SIZE,
    SHIRT_BOTTOM, SHIRT_RINGS, SHIRT_SIDES, SHIRT_TOP,
};
pub use mesh::{AdjacencyWeighting, GarmentMesh, Vec3};
pub use stress::{compute_vertex_stress, select_high_stress, StressField};
pub use tps::{
    cap_displacement, deform, sample_noise, solve_tps_weights, spline_displacement, Kernel,
    TpsConfig, TpsWeights, RIDGE,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Parameters of the full non-rigid pipeline (stress, selection, spline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonRigidConfig {
    pub sigma_thres: f64,
    pub gamma: f64,
    pub rho: f64,
    pub n_min: usize,
    /// Upper bound of the random target-offset magnitude.
    pub offset_magnitude: f64,
    pub tps: TpsConfig,
}

impl Default for NonRigidConfig {
    fn default() -> Self {
        NonRigidConfig {
            sigma_thres: 0.8,
            gamma: 0.01,
            rho: 0.2,
            n_min: 3,
            offset_magnitude: 0.02,
            tps: TpsConfig::default(),
        }
    }
}

/// Result of one random garment deformation.
#[derive(Debug, Clone)]
pub struct Deformation {
    pub mesh: GarmentMesh,
    pub stress: StressField,
    pub control: ControlPointSet,
}

/// Stress → candidates → control points → random offsets → capped spline.
/// Every random draw derives from `seed`.
pub fn deform_garment(mesh: &GarmentMesh, cfg: &NonRigidConfig, seed: u64) -> Result<Deformation> {
    let stress = compute_vertex_stress(mesh)?;
    let candidates = select_high_stress(&stress, cfg.sigma_thres);
    let mut control = select_control_points(
        &candidates,
        &stress,
        &mesh.vertices,
        cfg.gamma,
        cfg.rho,
        cfg.n_min,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    control.sample_target_offsets(cfg.offset_magnitude, &mut rng);
    let tps = TpsConfig {
        rng_seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
        ..cfg.tps.clone()
    };
    let deformed = deform(mesh, &control, &stress, &tps)?;
    Ok(Deformation {
        mesh: deformed,
        stress,
        control,
    })
}
