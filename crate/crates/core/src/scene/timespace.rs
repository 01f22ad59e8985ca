//! Perspective-consistent person boxes and the render parameters they imply.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::geometry::MODEL_HEIGHT;

/// Nearest and farthest render distance, in model meters.
pub const MIN_DISTANCE: f64 = 1.0;
pub const MAX_DISTANCE: f64 = 4.0;
/// Smallest person box the sampler will produce.
pub const MIN_BOX_HEIGHT: f64 = 32.0;

/// Pinhole camera over a flat ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal length in pixels.
    pub focal: f64,
    /// Principal point.
    pub cx: f64,
    pub cy: f64,
    /// Height of the modeled person.
    pub person_height: f64,
    /// Camera height above the ground plane.
    pub mount_height: f64,
}

impl Camera {
    /// Camera whose focal length equals the image height (416 px for the
    /// standard 416x416 input).
    pub fn for_image(width: usize, height: usize) -> Self {
        Camera {
            focal: height as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            person_height: MODEL_HEIGHT,
            mount_height: MODEL_HEIGHT / 2.0,
        }
    }

    /// Projected person height at distance `d`.
    pub fn box_height(&self, d: f64) -> f64 {
        self.focal * self.person_height / d
    }

    pub fn distance_for_height(&self, h: f64) -> f64 {
        self.focal * self.person_height / h
    }
}

/// Pose of the rendered model relative to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    /// Box height relative to the unit-distance person height.
    pub scale: f64,
    pub distance: f64,
    /// Downward viewing angle to the box center (radians).
    pub elevation: f64,
    /// Model yaw (radians), zero when facing the camera, in `[-pi, pi)`.
    pub azimuth: f64,
    /// Ground-plane facing direction `(lateral, towards camera)`.
    pub orientation: [f64; 2],
}

/// Output of [`timespace_sample`]: three boxes on one walking line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpaceBoxes {
    pub human: BoundingBox,
    pub near: BoundingBox,
    pub far: BoundingBox,
    pub v_orient: [f64; 2],
    pub d_human: f64,
    pub d_near: f64,
    pub d_far: f64,
}

impl TimeSpaceBoxes {
    pub fn boxes(&self) -> [(BoundingBox, f64); 3] {
        [
            (self.human, self.d_human),
            (self.near, self.d_near),
            (self.far, self.d_far),
        ]
    }
}

/// Deterministic part of the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub v_orient: [f64; 2],
    pub d_human: f64,
    /// `d_far / d_human = d_human / d_near`, strictly above 1.
    pub depth_ratio: f64,
    /// Box width / height.
    pub aspect: f64,
    /// Horizontal center of the human box in pixels.
    pub x_center: f64,
    /// Foot row of the human box in pixels.
    pub foot_row: f64,
}

fn normalize(v: [f64; 2]) -> Result<[f64; 2]> {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::domain("orientation vector must be non-zero"));
    }
    Ok([v[0] / n, v[1] / n])
}

/// Places the human, near, and far boxes for a given walking line.
///
/// Heights follow `h = f H / d`. Lateral positions move along the facing
/// direction on the ground; foot rows follow the flat-ground horizon. Boxes
/// that would leave the frame are shifted back inside without resizing.
pub fn place_boxes(width: usize, height: usize, cam: &Camera, p: &Placement) -> Result<TimeSpaceBoxes> {
    let v = normalize(p.v_orient)?;
    if !(p.depth_ratio > 1.0) {
        return Err(Error::domain("depth ratio must exceed 1"));
    }
    let d_near = p.d_human / p.depth_ratio;
    let d_far = p.d_human * p.depth_ratio;
    let lateral_h = (p.x_center - cam.cx) * p.d_human / cam.focal;
    let horizon = p.foot_row - cam.focal * cam.mount_height / p.d_human;
    let make = |d: f64, lateral: f64| -> Result<BoundingBox> {
        let h = cam.box_height(d);
        let w = h * p.aspect;
        let cx = cam.cx + cam.focal * lateral / d;
        let foot = horizon + cam.focal * cam.mount_height / d;
        let b = BoundingBox::new(cx - w / 2.0, foot - h, cx + w / 2.0, foot)?;
        b.shifted_into(width, height).ok_or_else(|| {
            Error::domain(format!("{w:.1}x{h:.1} person box does not fit {width}x{height}"))
        })
    };
    Ok(TimeSpaceBoxes {
        human: make(p.d_human, lateral_h)?,
        near: make(d_near, lateral_h + v[0] * (p.d_human - d_near))?,
        far: make(d_far, lateral_h - v[0] * (d_far - p.d_human))?,
        v_orient: v,
        d_human: p.d_human,
        d_near,
        d_far,
    })
}

/// Samples a walking line on a `width x height` background.
pub fn timespace_sample<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    cam: &Camera,
    rng: &mut R,
) -> Result<TimeSpaceBoxes> {
    // aspect ratio 2:5 jittered by 15%
    let aspect = 0.4 * rng.random_range(0.85..1.15);
    let d_fit = cam
        .distance_for_height(height as f64 * 0.98)
        .max(cam.distance_for_height(width as f64 * 0.98 / (aspect * 1.0001)));
    let d_lo = MIN_DISTANCE.max(d_fit);
    let d_hi = MAX_DISTANCE.min(cam.distance_for_height(MIN_BOX_HEIGHT));
    if !(d_lo * 1.05 * 1.05 < d_hi) {
        return Err(Error::domain(format!(
            "background {width}x{height} too small for person boxes"
        )));
    }
    let max_ratio = (d_hi / d_lo).sqrt();
    let depth_ratio = rng.random_range(1.1f64.min(max_ratio * 0.99)..1.3f64.min(max_ratio));
    let d_human = rng.random_range(d_lo * depth_ratio..d_hi / depth_ratio);
    let angle = rng.random_range(-PI..PI);
    let h = cam.box_height(d_human);
    let w = h * aspect;
    let x_center = rng.random_range(w / 2.0..(width as f64 - w / 2.0).max(w / 2.0 + 1e-9));
    let foot_row = rng.random_range(h..(height as f64).max(h + 1e-9));
    place_boxes(
        width,
        height,
        cam,
        &Placement {
            v_orient: [angle.sin(), angle.cos()],
            d_human,
            depth_ratio,
            aspect,
            x_center,
            foot_row,
        },
    )
}

/// Recovers distance, scale, and viewing angles from a person box.
///
/// Returns the parameters and whether the distance had to be clamped into
/// `[MIN_DISTANCE, MAX_DISTANCE]`.
pub fn derive_render_params(
    bx: &BoundingBox,
    v_orient: [f64; 2],
    cam: &Camera,
) -> Result<(RenderParams, bool)> {
    if !(bx.height() > 0.0) {
        return Err(Error::domain("zero-height box"));
    }
    if !(cam.focal > 0.0) {
        return Err(Error::domain("focal length must be positive"));
    }
    let v = normalize(v_orient)?;
    let raw = cam.distance_for_height(bx.height());
    let distance = raw.clamp(MIN_DISTANCE, MAX_DISTANCE);
    let clamped = distance != raw;
    if clamped {
        log::warn!("box height {:.1} implies distance {raw:.2}; clamped to {distance:.2}", bx.height());
    }
    let mut azimuth = -v[0].atan2(v[1]);
    if azimuth >= PI {
        azimuth -= 2.0 * PI;
    }
    let (_, cy) = bx.center();
    let elevation = (cy - cam.cy).atan2(cam.focal);
    Ok((
        RenderParams {
            scale: bx.height() / (cam.focal * cam.person_height),
            distance,
            elevation,
            azimuth,
            orientation: v,
        },
        clamped,
    ))
}
