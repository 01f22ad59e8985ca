//! Shakedrop regularization for residual blocks.
//!
//! A block computes `x_out = x_in + c * H(x_in)` where the fusion coefficient
//! is `c = γ + ω - γω` with `γ ~ Bernoulli(p_s)` and `ω ~ U(1-k, 1+k)`.
//! The backward pass draws its own `γ₂` from the same distribution and reuses
//! the forward `ω`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShakedropCfg {
    pub p_s: f64,
    pub k: f64,
    pub enabled: bool,
    pub rng_seed: u64,
}

impl Default for ShakedropCfg {
    fn default() -> Self {
        ShakedropCfg {
            p_s: 0.9,
            k: 0.5,
            enabled: true,
            rng_seed: 0,
        }
    }
}

impl ShakedropCfg {
    pub fn disabled() -> Self {
        ShakedropCfg {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_s) {
            return Err(Error::domain(format!("shakedrop p_s {} outside [0,1]", self.p_s)));
        }
        if !(0.0..1.0).contains(&self.k) {
            return Err(Error::domain(format!("shakedrop k {} outside [0,1)", self.k)));
        }
        Ok(())
    }
}

/// `γ + ω(1-γ)`, algebraically `γ + ω - γω` but exactly 1.0 whenever γ = 1.
pub fn fusion_coefficient(gamma: f64, omega: f64) -> f64 {
    gamma + omega * (1.0 - gamma)
}

/// Random state of one residual block for one forward/backward pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShakeState {
    pub gamma1: f64,
    pub omega: f64,
    pub forward_coef: f64,
}

impl ShakeState {
    pub const IDENTITY: ShakeState = ShakeState {
        gamma1: 1.0,
        omega: 1.0,
        forward_coef: 1.0,
    };
}

fn draw_gamma(cfg: &ShakedropCfg, rng: &mut dyn RngCore) -> f64 {
    if rng.random_bool(cfg.p_s) {
        1.0
    } else {
        0.0
    }
}

fn draw_omega(cfg: &ShakedropCfg, rng: &mut dyn RngCore) -> f64 {
    if cfg.k == 0.0 {
        // Keep the draw so RNG consumption does not depend on k.
        let _: f64 = rng.random();
        1.0
    } else {
        rng.random_range(1.0 - cfg.k..1.0 + cfg.k)
    }
}

/// Draws `(γ₁, ω)` for a forward pass. Disabled configs draw nothing.
pub fn draw_forward(cfg: &ShakedropCfg, rng: &mut dyn RngCore) -> ShakeState {
    if !cfg.enabled {
        return ShakeState::IDENTITY;
    }
    let gamma1 = draw_gamma(cfg, rng);
    let omega = draw_omega(cfg, rng);
    ShakeState {
        gamma1,
        omega,
        forward_coef: fusion_coefficient(gamma1, omega),
    }
}

/// Draws `γ₂` and returns the backward coefficient for a block whose forward
/// state is `state`.
pub fn draw_backward(state: &ShakeState, cfg: &ShakedropCfg, rng: &mut dyn RngCore) -> f64 {
    if !cfg.enabled {
        return 1.0;
    }
    let gamma2 = draw_gamma(cfg, rng);
    fusion_coefficient(gamma2, state.omega)
}

/// `x_in + c·H(x_in)` with freshly drawn coefficient `c`.
pub fn shakedrop_forward<F>(x_in: &[f64], h: F, cfg: &ShakedropCfg, rng: &mut dyn RngCore) -> (Vec<f64>, ShakeState)
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let state = draw_forward(cfg, rng);
    let hx = h(x_in);
    debug_assert_eq!(hx.len(), x_in.len());
    let out = x_in
        .iter()
        .zip(&hx)
        .map(|(x, v)| x + state.forward_coef * v)
        .collect();
    (out, state)
}

/// `g_out + c₂·dHᵀ(g_out)` where `dh` is the vector-Jacobian product of the
/// block and `c₂` uses a fresh `γ₂` and the forward `ω`.
pub fn shakedrop_backward<F>(
    g_out: &[f64],
    dh: F,
    state: &ShakeState,
    cfg: &ShakedropCfg,
    rng: &mut dyn RngCore,
) -> Vec<f64>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let coef = draw_backward(state, cfg, rng);
    let through = dh(g_out);
    g_out
        .iter()
        .zip(&through)
        .map(|(g, t)| g + coef * t)
        .collect()
}
