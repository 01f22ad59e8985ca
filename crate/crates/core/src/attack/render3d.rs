//! The 3D branch: a randomly deformed garment worn by the humanoid, placed
//! with perspective-consistent scale, relit to match its background, and
//! composited.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::patch::Patch;
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::geometry::{deform_garment, GarmentMesh, Humanoid, NonRigidConfig};
use crate::image::Image;
use crate::scene::{
    composite, composite_backward, derive_render_params, rasterize, relight_optimize, timespace_sample,
    Camera, Palette, RelightConfig, Relighting, RenderOutput, RenderParams, SSIM_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scene3DConfig {
    pub nonrigid: NonRigidConfig,
    pub relight: RelightConfig,
    pub relight_enabled: bool,
    /// Renders and backgrounds are downsampled to this longest side before
    /// relighting.
    pub relight_max_side: usize,
    /// Largest yaw away from facing the camera. The patch sits on the front
    /// panel, so back views would carry no gradient.
    pub max_azimuth_deg: f64,
    /// Uniform jitter applied to the palette colors.
    pub palette_jitter: f64,
}

impl Default for Scene3DConfig {
    fn default() -> Self {
        Scene3DConfig {
            nonrigid: NonRigidConfig::default(),
            relight: RelightConfig {
                iters: 30,
                ..RelightConfig::default()
            },
            relight_enabled: true,
            relight_max_side: 48,
            max_azimuth_deg: 60.0,
            palette_jitter: 0.15,
        }
    }
}

/// Everything random about one 3D sample, fixed before the patch is applied.
#[derive(Debug, Clone)]
pub struct Setup3D<'a> {
    pub background: &'a Image,
    pub camera: Camera,
    pub target: BoundingBox,
    pub params: RenderParams,
    pub palette: Palette,
    pub garment: GarmentMesh,
}

pub fn sample_setup3d<'a, R: Rng + ?Sized>(
    background: &'a Image,
    model: &Humanoid,
    cfg: &Scene3DConfig,
    rng: &mut R,
    geometry_seed: u64,
) -> Result<Setup3D<'a>> {
    let (w, h) = background.dims();
    let camera = Camera::for_image(w, h);
    let boxes = timespace_sample(w, h, &camera, rng)?;
    let max_az = cfg.max_azimuth_deg.to_radians().min(PI);
    let az = if max_az > 0.0 { rng.random_range(-max_az..=max_az) } else { 0.0 };
    // azimuth = -atan2(vx, vz)
    let (params, _) = derive_render_params(&boxes.human, [-az.sin(), az.cos()], &camera)?;
    let base = Palette::default();
    let j = cfg.palette_jitter;
    let mut jitter = |c: [f64; 3]| c.map(|v| (v + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 }).clamp(0.0, 1.0));
    let palette = Palette {
        skin: jitter(base.skin),
        shirt: jitter(base.shirt),
        pants: jitter(base.pants),
    };
    let garment = deform_garment(&model.garment, &cfg.nonrigid, geometry_seed)?.mesh;
    Ok(Setup3D {
        background,
        camera,
        target: boxes.human,
        params,
        palette,
        garment,
    })
}

/// A rendered and composited 3D sample.
#[derive(Debug, Clone)]
pub struct Render3D {
    /// Final image fed to the detector.
    pub image: Image,
    /// Tight silhouette box, the ground truth for this sample.
    pub gt: BoundingBox,
    pub render: RenderOutput,
    /// Relighting applied to the render (held fixed for gradients).
    pub relight: Relighting,
}

impl Render3D {
    /// Accumulates `d loss / d texel` from `d loss / d image`.
    pub fn backward(&self, grad_image: &[f64], grad_texture: &mut [f64]) {
        let mut g = composite_backward(&self.render.mask, grad_image);
        self.relight.backward(&self.render.image, &mut g);
        self.render.backward(&g, grad_texture);
    }
}

fn fit_relighting(render: &RenderOutput, background: &Image, cfg: &Scene3DConfig) -> Result<Relighting> {
    let sil = &render.silhouette;
    let (x0, y0) = (sil.x_min as usize, sil.y_min as usize);
    let (w, h) = ((sil.x_max - sil.x_min) as usize, (sil.y_max - sil.y_min) as usize);
    let rendered = render.image.crop(x0, y0, w, h)?;
    let mut real = background.crop(x0, y0, w, h)?;
    for y in 0..h {
        for x in 0..w {
            if !render.mask.get(x0 + x, y0 + y) {
                real.set(x, y, [0.0; 3]);
            }
        }
    }
    let s = (cfg.relight_max_side as f64 / w.max(h) as f64).min(1.0);
    let (sw, sh) = (((w as f64 * s).round() as usize).max(1), ((h as f64 * s).round() as usize).max(1));
    if sw < SSIM_WINDOW || sh < SSIM_WINDOW {
        log::debug!("silhouette {w}x{h} too small to relight; using identity");
        return Ok(Relighting::IDENTITY);
    }
    let (rendered, real) = if s < 1.0 {
        (rendered.resize(sw, sh), real.resize(sw, sh))
    } else {
        (rendered, real)
    };
    Ok(relight_optimize(&rendered, &real, &cfg.relight)?.params)
}

/// Renders `patch` on the sampled garment and composites it into the
/// background.
pub fn render3d(setup: &Setup3D<'_>, model: &Humanoid, patch: &Patch, cfg: &Scene3DConfig) -> Result<Render3D> {
    let (w, h) = setup.background.dims();
    let render = rasterize(
        model,
        &setup.garment,
        Some(&patch.texels),
        &setup.palette,
        &setup.params,
        &setup.camera,
        &setup.target,
        w,
        h,
    )?;
    let relight = if cfg.relight_enabled {
        fit_relighting(&render, setup.background, cfg)?
    } else {
        Relighting::IDENTITY
    };
    let lit = relight.apply(&render.image);
    let image = composite(&lit, &render.mask, setup.background)?;
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("3D composite produced non-finite pixels"));
    }
    Ok(Render3D {
        image,
        gt: render.silhouette,
        render,
        relight,
    })
}
