//! Photometric alignment of a render to its background slice.
//!
//! The relit image is `alpha * I + beta + theta_c * I * (1 - I)` per channel
//! `c`. Contrast and brightness are linear; the `theta` term bends the tone
//! curve without moving black or white. Parameters minimize
//! `1 - SSIM(relit, real)` plus quadratic penalties pulling towards the
//! identity, with an adaptive-moment optimizer and box clipping of `alpha`
//! and `beta` after every step.

use serde::{Deserialize, Serialize};

use super::ssim::ssim_with_grad;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelightConfig {
    pub alpha_bounds: [f64; 2],
    pub beta_bounds: [f64; 2],
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub lambda_theta: f64,
    pub lr: f64,
    pub iters: usize,
}

impl Default for RelightConfig {
    fn default() -> Self {
        RelightConfig {
            alpha_bounds: [0.5, 1.5],
            beta_bounds: [-0.3, 0.3],
            lambda_alpha: 1e-3,
            lambda_beta: 1e-3,
            lambda_theta: 1e-3,
            lr: 0.05,
            iters: 100,
        }
    }
}

impl RelightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_bounds[0] < self.alpha_bounds[1]) || !(self.beta_bounds[0] < self.beta_bounds[1]) {
            return Err(Error::domain("relight bounds must satisfy low < high"));
        }
        if self.iters == 0 {
            return Err(Error::domain("relight needs at least one iteration"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::domain("relight learning rate must be positive"));
        }
        Ok(())
    }
}

/// Contrast, brightness, and per-channel tone-curve coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relighting {
    pub alpha: f64,
    pub beta: f64,
    pub theta: [f64; 3],
}

impl Default for Relighting {
    fn default() -> Self {
        Relighting::IDENTITY
    }
}

impl Relighting {
    pub const IDENTITY: Relighting = Relighting {
        alpha: 1.0,
        beta: 0.0,
        theta: [0.0; 3],
    };

    #[inline]
    fn map(&self, v: f64, c: usize) -> f64 {
        self.alpha * v + self.beta + self.theta[c] * v * (1.0 - v)
    }

    /// Relit image without clamping.
    pub fn apply_raw(&self, img: &Image) -> Image {
        let mut out = img.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.map(*v, i % 3);
        }
        out
    }

    /// Relit image clamped to `[0, 1]`.
    pub fn apply(&self, img: &Image) -> Image {
        let mut out = self.apply_raw(img);
        out.clamp01();
        out
    }

    /// Multiplies `grad` (w.r.t. the clamped relit image) by the derivative of
    /// [`Relighting::apply`] at `img`, in place.
    pub fn backward(&self, img: &Image, grad: &mut [f64]) {
        for (i, (g, &v)) in grad.iter_mut().zip(img.data()).enumerate() {
            let c = i % 3;
            let y = self.map(v, c);
            *g = if (0.0..=1.0).contains(&y) {
                *g * (self.alpha + self.theta[c] * (1.0 - 2.0 * v))
            } else {
                0.0
            };
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelightResult {
    pub params: Relighting,
    /// Relit render, clamped to `[0, 1]`.
    pub image: Image,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn loss_and_grad(p: &Relighting, io: &Image, ir: &Image, cfg: &RelightConfig) -> Result<(f64, [f64; 5])> {
    let relit = p.apply_raw(io);
    let (s, g) = ssim_with_grad(&relit, ir)?;
    let reg = cfg.lambda_alpha * (p.alpha - 1.0).powi(2)
        + cfg.lambda_beta * p.beta * p.beta
        + cfg.lambda_theta * p.theta.iter().map(|t| t * t).sum::<f64>();
    let mut grad = [0.0; 5];
    grad[0] = 2.0 * cfg.lambda_alpha * (p.alpha - 1.0);
    grad[1] = 2.0 * cfg.lambda_beta * p.beta;
    for c in 0..3 {
        grad[2 + c] = 2.0 * cfg.lambda_theta * p.theta[c];
    }
    for (i, (&gi, &v)) in g.iter().zip(io.data()).enumerate() {
        // d(1 - ssim)/d relit = -gi
        grad[0] -= gi * v;
        grad[1] -= gi;
        grad[2 + i % 3] -= gi * v * (1.0 - v);
    }
    Ok((1.0 - s + reg, grad))
}

/// Runs `cfg.iters` optimizer steps from the identity and returns the
/// lowest-loss iterate.
pub fn relight_optimize(render: &Image, real: &Image, cfg: &RelightConfig) -> Result<RelightResult> {
    cfg.validate()?;
    if !render.same_shape(real) {
        return Err(Error::domain("relight inputs differ in shape"));
    }
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut p = Relighting::IDENTITY;
    let mut m = [0.0; 5];
    let mut v = [0.0; 5];
    let mut best = (f64::INFINITY, p);
    let mut initial_loss = f64::NAN;
    for t in 0..=cfg.iters {
        let (loss, grad) = loss_and_grad(&p, render, real, cfg)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numerical(format!("relight loss not finite at iteration {t}")));
        }
        if t == 0 {
            initial_loss = loss;
        }
        if loss < best.0 {
            best = (loss, p);
        }
        if t == cfg.iters {
            break;
        }
        let step = (t + 1) as i32;
        let mut params = [p.alpha, p.beta, p.theta[0], p.theta[1], p.theta[2]];
        for k in 0..5 {
            m[k] = B1 * m[k] + (1.0 - B1) * grad[k];
            v[k] = B2 * v[k] + (1.0 - B2) * grad[k] * grad[k];
            let mh = m[k] / (1.0 - B1.powi(step));
            let vh = v[k] / (1.0 - B2.powi(step));
            params[k] -= cfg.lr * mh / (vh.sqrt() + EPS);
        }
        p = Relighting {
            alpha: params[0].clamp(cfg.alpha_bounds[0], cfg.alpha_bounds[1]),
            beta: params[1].clamp(cfg.beta_bounds[0], cfg.beta_bounds[1]),
            theta: [params[2], params[3], params[4]],
        };
    }
    let (final_loss, params) = best;
    Ok(RelightResult {
        image: params.apply(render),
        params,
        initial_loss,
        final_loss,
    })
}
