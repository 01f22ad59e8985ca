//! Pasting a patch onto a person image under a random 2D transform.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::patch::Patch;
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::{BoxFilter, Image};
use crate::scene::TexelTap;
use crate::seed;

/// Gray level used for occluders.
pub const OCCLUSION_GRAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    /// Radians, counter-clockwise on screen.
    pub rotation: f64,
    /// Image pixels per patch texel.
    pub scale: f64,
    /// Pixels, relative to the box center.
    pub offset: [f64; 2],
    /// Area fraction of a centered gray square covering the patch.
    pub occlusion: Option<f64>,
    /// Amplitude of uniform per-pixel noise added over the patch.
    pub noise: f64,
    pub noise_seed: u64,
}

impl Transform2D {
    pub fn identity() -> Self {
        Transform2D {
            rotation: 0.0,
            scale: 1.0,
            offset: [0.0, 0.0],
            occlusion: None,
            noise: 0.0,
            noise_seed: 0,
        }
    }

    /// Undistorted placement whose patch side is `fraction` of the box height.
    pub fn fitted(patch: &Patch, gt: &BoundingBox, fraction: f64) -> Self {
        Transform2D {
            scale: fraction * gt.height() / patch.width() as f64,
            ..Transform2D::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::domain(format!("transform scale {} must be positive", self.scale)));
        }
        if let Some(f) = self.occlusion {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::domain(format!("occlusion fraction {f} outside [0,1)")));
            }
        }
        if !(self.noise >= 0.0) || !self.rotation.is_finite() || self.offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("transform has a non-finite or negative component"));
        }
        Ok(())
    }
}

/// Sampling ranges for random 2D transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformRanges {
    pub rotation_deg: f64,
    /// Patch side as a fraction of the box height before jitter.
    pub base_fraction: f64,
    pub scale_jitter: [f64; 2],
    /// Maximum offset as a fraction of the box width and height.
    pub offset_fraction: f64,
    pub occlusion_prob: f64,
    pub occlusion_area: [f64; 2],
    pub noise_max: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        TransformRanges {
            rotation_deg: 20.0,
            base_fraction: 0.3,
            scale_jitter: [0.8, 1.2],
            offset_fraction: 0.1,
            occlusion_prob: 0.3,
            occlusion_area: [0.05, 0.15],
            noise_max: 0.03,
        }
    }
}

impl TransformRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rotation_deg >= 0.0
            && self.base_fraction > 0.0
            && self.scale_jitter[0] > 0.0
            && self.scale_jitter[0] <= self.scale_jitter[1]
            && self.offset_fraction >= 0.0
            && (0.0..=1.0).contains(&self.occlusion_prob)
            && 0.0 <= self.occlusion_area[0]
            && self.occlusion_area[0] <= self.occlusion_area[1]
            && self.occlusion_area[1] < 1.0
            && self.noise_max >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid transform ranges {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, patch: &Patch, gt: &BoundingBox, rng: &mut R) -> Transform2D {
        let r = self.rotation_deg.to_radians();
        let rotation = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let jitter = rng.random_range(self.scale_jitter[0]..=self.scale_jitter[1]);
        let scale = jitter * self.base_fraction * gt.height() / patch.width() as f64;
        let mut offset = [0.0; 2];
        for (o, extent) in offset.iter_mut().zip([gt.width(), gt.height()]) {
            let m = self.offset_fraction * extent;
            if m > 0.0 {
                *o = rng.random_range(-m..=m);
            }
        }
        let occlusion = if rng.random_bool(self.occlusion_prob) {
            Some(rng.random_range(self.occlusion_area[0]..=self.occlusion_area[1]))
        } else {
            None
        };
        let noise = if self.noise_max > 0.0 { rng.random_range(0.0..=self.noise_max) } else { 0.0 };
        Transform2D {
            rotation,
            scale,
            offset,
            occlusion,
            noise,
            noise_seed: rng.random(),
        }
    }
}

/// Composited image with the texel dependencies of every patch pixel.
#[derive(Debug, Clone)]
pub struct Applied2D {
    pub image: Image,
    pub taps: Vec<TexelTap>,
    /// Per tap, channels where the output was clamped (zero gradient).
    pub saturated: Vec<[bool; 3]>,
    /// Patch pixels that fell outside the image.
    pub clipped: usize,
    /// Prefilter applied to the patch before sampling; tap texel indices
    /// refer to the filtered texture.
    pub filter: BoxFilter,
    /// Half-open texel rectangle replaced by the occluder.
    pub hidden: Option<(usize, usize, usize, usize)>,
}

impl Applied2D {
    /// Accumulates `d loss / d texel` from `d loss / d pixel`.
    pub fn backward(&self, grad_image: &[f64], grad_texture: &mut [f64]) {
        if self.filter.is_identity() && self.hidden.is_none() {
            self.scatter(grad_image, grad_texture);
            return;
        }
        let (fw, fh) = self.filter.dims();
        let mut filtered = vec![0.0; fw * fh * 3];
        self.scatter(grad_image, &mut filtered);
        let src = if self.filter.is_identity() {
            filtered
        } else {
            let mut src = vec![0.0; self.filter.src_width * self.filter.src_height * 3];
            self.filter.backward(&filtered, &mut src);
            src
        };
        let pw = self.filter.src_width;
        for (i, g) in src.iter().enumerate() {
            let texel = i / 3;
            if !self.hidden.is_some_and(|r| in_rect(r, texel % pw, texel / pw)) {
                grad_texture[i] += g;
            }
        }
    }

    fn scatter(&self, grad_image: &[f64], grad_texture: &mut [f64]) {
        for (tap, sat) in self.taps.iter().zip(&self.saturated) {
            let p = tap.pixel as usize * 3;
            for k in 0..4 {
                let w = tap.weights[k];
                if w == 0.0 {
                    continue;
                }
                let t = tap.texels[k] as usize * 3;
                for c in 0..3 {
                    if !sat[c] {
                        grad_texture[t + c] += w * grad_image[p + c];
                    }
                }
            }
        }
    }
}

fn in_rect((x0, y0, x1, y1): (usize, usize, usize, usize), x: usize, y: usize) -> bool {
    x >= x0 && x < x1 && y >= y0 && y < y1
}

/// Half-open texel square `[lo, hi)` hidden by the occluder.
fn occluded_square(width: usize, height: usize, area: Option<f64>) -> Option<(usize, usize, usize, usize)> {
    let f = area.filter(|f| *f > 0.0)?;
    let side_x = (f.sqrt() * width as f64).round() as usize;
    let side_y = (f.sqrt() * height as f64).round() as usize;
    let x0 = (width - side_x.min(width)) / 2;
    let y0 = (height - side_y.min(height)) / 2;
    Some((x0, y0, x0 + side_x, y0 + side_y))
}

/// Pastes `patch` centered on `gt` (plus the transform offset), rotated and
/// scaled, with optional occlusion and noise. Output is clamped to `[0, 1]`.
pub fn apply_2d(patch: &Patch, image: &Image, gt: &BoundingBox, t: &Transform2D) -> Result<Applied2D> {
    t.validate()?;
    gt.validate()?;
    let (iw, ih) = image.dims();
    if !gt.contained_in(iw, ih) {
        return Err(Error::domain(format!("ground-truth box {gt:?} is not inside the {iw}x{ih} image")));
    }
    let (pw, ph) = (patch.width(), patch.height());
    let (half_w, half_h) = (t.scale * pw as f64 / 2.0, t.scale * ph as f64 / 2.0);
    let (bcx, bcy) = gt.center();
    // snap the corner to the pixel grid so an unrotated integer-scale paste
    // lands texels exactly on pixels
    let cx = (bcx + t.offset[0] - half_w).round() + half_w;
    let cy = (bcy + t.offset[1] - half_h).round() + half_h;
    let (sin, cos) = t.rotation.sin_cos();
    let reach = (half_w * half_w + half_h * half_h).sqrt();
    let occ = occluded_square(pw, ph, t.occlusion);
    // Occluded texels become gray, then a minified paste samples a box
    // filtered copy so every texel under a pixel contributes.
    let filter = BoxFilter::for_scale(pw, ph, t.scale);
    let mut source = std::borrow::Cow::Borrowed(&patch.texels);
    if let Some(r) = occ {
        let masked = source.to_mut();
        for y in r.1..r.3.min(ph) {
            for x in r.0..r.2.min(pw) {
                masked.set(x, y, [OCCLUSION_GRAY; 3]);
            }
        }
    }
    if !filter.is_identity() {
        source = std::borrow::Cow::Owned(filter.apply(&source));
    }
    let (sw, sh) = source.dims();
    let f = filter.factor as f64;
    let texels = source.data();
    let mut noise_rng = seed::stream(t.noise_seed, &[0x4E4F_4953]);

    let mut out = image.clone();
    let mut taps = Vec::new();
    let mut saturated = Vec::new();
    let mut clipped = 0usize;
    let y_lo = (cy - reach).floor() as i64;
    let y_hi = (cy + reach).ceil() as i64;
    let x_lo = (cx - reach).floor() as i64;
    let x_hi = (cx + reach).ceil() as i64;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // inverse rotation (screen y points down), then inverse scale
            let u = (cos * dx + sin * dy) / t.scale + pw as f64 / 2.0;
            let v = (-sin * dx + cos * dy) / t.scale + ph as f64 / 2.0;
            if !(0.0..pw as f64).contains(&u) || !(0.0..ph as f64).contains(&v) {
                continue;
            }
            if x < 0 || y < 0 || x >= iw as i64 || y >= ih as i64 {
                clipped += 1;
                continue;
            }
            let tx = (u / f - 0.5).clamp(0.0, (sw - 1) as f64);
            let ty = (v / f - 0.5).clamp(0.0, (sh - 1) as f64);
            let x0 = tx.floor() as usize;
            let y0 = ty.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let y1 = (y0 + 1).min(sh - 1);
            let fx = tx - x0 as f64;
            let fy = ty - y0 as f64;
            let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
            let bilinear = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
            let pixel = (y as usize * iw + x as usize) as u32;
            let mut tap = TexelTap {
                pixel,
                texels: [0; 4],
                weights: bilinear,
            };
            let mut rgb = [0.0; 3];
            for k in 0..4 {
                let (cxk, cyk) = corners[k];
                let idx = cyk * sw + cxk;
                tap.texels[k] = idx as u32;
                for c in 0..3 {
                    rgb[c] += bilinear[k] * texels[idx * 3 + c];
                }
            }
            let mut sat = [false; 3];
            for c in 0..3 {
                if t.noise > 0.0 {
                    rgb[c] += noise_rng.random_range(-t.noise..=t.noise);
                }
                if !(0.0..=1.0).contains(&rgb[c]) {
                    sat[c] = true;
                    rgb[c] = rgb[c].clamp(0.0, 1.0);
                }
            }
            out.set(x as usize, y as usize, rgb);
            taps.push(tap);
            saturated.push(sat);
        }
    }
    if clipped > 0 {
        log::warn!("patch extends past the image; {clipped} pixels clipped");
    }
    Ok(Applied2D {
        image: out,
        taps,
        saturated,
        clipped,
        filter,
        hidden: occ,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Patch, Image, BoundingBox) {
        let patch = Patch::random(30, 30, 5).unwrap();
        let img = Image::filled(100, 100, [0.2, 0.4, 0.6]);
        let gt = BoundingBox::new(20.0, 10.0, 60.0, 90.0).unwrap();
        (patch, img, gt)
    }

    #[test]
    fn identity_is_verbatim() {
        let (patch, img, gt) = setup();
        let out = apply_2d(&patch, &img, &gt, &Transform2D::identity()).unwrap();
        // box center (40, 50), 30x30 patch → corner (25, 35)
        for ty in 0..30 {
            for tx in 0..30 {
                assert_eq!(out.image.get(25 + tx, 35 + ty), patch.texels.get(tx, ty));
            }
        }
        assert_eq!(out.image.get(24, 35), [0.2, 0.4, 0.6]);
        assert_eq!(out.image.get(55, 64), [0.2, 0.4, 0.6]);
        assert_eq!(out.taps.len(), 900);
    }

    #[test]
    fn full_turn_matches_identity() {
        let (patch, img, gt) = setup();
        let a = apply_2d(&patch, &img, &gt, &Transform2D::identity()).unwrap();
        let turned = Transform2D {
            rotation: 2.0 * std::f64::consts::PI,
            ..Transform2D::identity()
        };
        let b = apply_2d(&patch, &img, &gt, &turned).unwrap();
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn ninth_area_occluder_is_a_centered_third() {
        assert_eq!(occluded_square(300, 300, Some(1.0 / 9.0)), Some((100, 100, 200, 200)));
        let (patch, img, gt) = setup();
        let t = Transform2D {
            occlusion: Some(1.0 / 9.0),
            ..Transform2D::identity()
        };
        let out = apply_2d(&patch, &img, &gt, &t).unwrap();
        assert_eq!(out.image.get(25 + 15, 35 + 15), [OCCLUSION_GRAY; 3]);
        assert_eq!(out.image.get(25, 35), patch.texels.get(0, 0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_backward(1.3);
    }

    #[test]
    fn minified_backward_matches_finite_differences() {
        check_backward(0.35);
    }

    #[test]
    fn minified_paste_averages_texels() {
        let (_, img, gt) = setup();
        // a 2x2 checker at a third of the size averages out to mid gray
        let mut patch = Patch::random(30, 30, 1).unwrap();
        for y in 0..30 {
            for x in 0..30 {
                patch.texels.set(x, y, [((x + y) % 2) as f64; 3]);
            }
        }
        let t = Transform2D {
            scale: 1.0 / 3.0,
            ..Transform2D::identity()
        };
        let out = apply_2d(&patch, &img, &gt, &t).unwrap();
        assert_eq!(out.filter.factor, 3);
        let p = out.image.get(40, 50);
        assert!((p[0] - 0.5).abs() < 0.06, "{p:?}");
    }

    fn check_backward(scale: f64) {
        let (patch, img, gt) = setup();
        let t = Transform2D {
            rotation: 0.3,
            scale,
            offset: [2.5, -1.5],
            occlusion: Some(0.1),
            noise: 0.0,
            noise_seed: 0,
        };
        let out = apply_2d(&patch, &img, &gt, &t).unwrap();
        let weights: Vec<f64> = (0..img.data().len()).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.5).collect();
        let objective = |p: &Patch| -> f64 {
            let o = apply_2d(p, &img, &gt, &t).unwrap();
            o.image.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; patch.texels.data().len()];
        out.backward(&weights, &mut grad);
        for idx in [0usize, 3 * 31 + 1, 3 * 450 + 2, 3 * 899] {
            let mut up = patch.clone();
            up.texels.data_mut()[idx] += 1e-6;
            let mut dn = patch.clone();
            dn.texels.data_mut()[idx] -= 1e-6;
            let fd = (objective(&up) - objective(&dn)) / 2e-6;
            assert!((fd - grad[idx]).abs() < 1e-6, "{idx}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn oversize_patch_is_clipped() {
        let (patch, img, gt) = setup();
        let t = Transform2D {
            scale: 5.0,
            ..Transform2D::identity()
        };
        let out = apply_2d(&patch, &img, &gt, &t).unwrap();
        assert!(out.clipped > 0);
        assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_transforms_rejected() {
        let (patch, img, gt) = setup();
        let bad = Transform2D {
            scale: 0.0,
            ..Transform2D::identity()
        };
        assert!(apply_2d(&patch, &img, &gt, &bad).is_err());
        let bad = Transform2D {
            occlusion: Some(1.0),
            ..Transform2D::identity()
        };
        assert!(apply_2d(&patch, &img, &gt, &bad).is_err());
    }

    #[test]
    fn sampled_transforms_are_valid() {
        let (patch, _, gt) = setup();
        let ranges = TransformRanges::default();
        let mut rng = seed::stream(1, &[]);
        for _ in 0..200 {
            ranges.sample(&patch, &gt, &mut rng).validate().unwrap();
        }
    }
}
