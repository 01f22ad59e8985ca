//! Patch updates: signed gradient steps and adaptive-moment steps.
//!
//! Both modes descend the loss, since the detection terms measure how
//! visible the person still is.

use serde::{Deserialize, Serialize};

use super::patch::Patch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Sign,
    Adaptive,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state carried across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchOptimizer {
    pub mode: StepMode,
    pub step: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl PatchOptimizer {
    pub fn new(mode: StepMode, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Config(format!("patch step {step} must be positive")));
        }
        Ok(PatchOptimizer {
            mode,
            step,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        })
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

/// One descent step on `patch`, clamped to `[0, 1]`. The patch and the
/// optimizer are left untouched when the gradient is rejected.
pub fn patch_step(patch: &mut Patch, gradient: &[f64], opt: &mut PatchOptimizer) -> Result<()> {
    let texels = patch.texels.data_mut();
    if gradient.len() != texels.len() || opt.m.len() != texels.len() {
        return Err(Error::domain(format!(
            "gradient of {} values for a patch of {}",
            gradient.len(),
            texels.len()
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::numerical(format!("patch gradient is not finite at texel value {i}")));
    }
    match opt.mode {
        StepMode::Sign => {
            for (p, g) in texels.iter_mut().zip(gradient) {
                *p = (*p - opt.step * sign(*g)).clamp(0.0, 1.0);
            }
        }
        StepMode::Adaptive => {
            opt.t += 1;
            let c1 = 1.0 - BETA1.powi(opt.t);
            let c2 = 1.0 - BETA2.powi(opt.t);
            for (i, (p, g)) in texels.iter_mut().zip(gradient).enumerate() {
                opt.m[i] = BETA1 * opt.m[i] + (1.0 - BETA1) * g;
                opt.v[i] = BETA2 * opt.v[i] + (1.0 - BETA2) * g * g;
                let update = (opt.m[i] / c1) / ((opt.v[i] / c2).sqrt() + ADAM_EPS);
                *p = (*p - opt.step * update).clamp(0.0, 1.0);
            }
        }
    }
    patch.iteration += 1;
    Ok(())
}
