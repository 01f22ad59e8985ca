//! Z-buffered triangle rasterizer with Lambertian shading and a texel-linear
//! patch texture.
//!
//! Geometry is not differentiated; pixel colors are linear in patch texels,
//! and [`RenderOutput::backward`] scatters pixel gradients back onto them.

use serde::{Deserialize, Serialize};

use super::timespace::{Camera, RenderParams};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::geometry::{BodyPart, GarmentMesh, Humanoid, Vec3, MODEL_HEIGHT};
use crate::image::{BoxFilter, Image, Mask};

pub const AMBIENT: f64 = 0.3;
pub const DIFFUSE: f64 = 0.7;
/// Direction towards the light in camera coordinates (x right, y down, z forward).
const LIGHT: [f64; 3] = [-0.35, -0.55, -0.76];
const NEAR_PLANE: f64 = 0.05;

/// Base colors of the untextured parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub skin: [f64; 3],
    pub shirt: [f64; 3],
    pub pants: [f64; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            skin: [0.85, 0.67, 0.55],
            shirt: [0.55, 0.58, 0.62],
            pants: [0.2, 0.22, 0.3],
        }
    }
}

/// A pixel whose color samples the patch: `pixel = sum_k weight_k * texel_k`
/// (per channel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelTap {
    pub pixel: u32,
    pub texels: [u32; 4],
    pub weights: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub mask: Mask,
    pub taps: Vec<TexelTap>,
    /// Tight box around the silhouette.
    pub silhouette: BoundingBox,
    /// Prefilter applied to the texture; tap texel indices refer to the
    /// filtered texture.
    pub filter: BoxFilter,
}

impl RenderOutput {
    /// Accumulates `d loss / d texel` into `grad_texture` (interleaved RGB,
    /// texture-sized) from `d loss / d pixel` of the rendered image.
    pub fn backward(&self, grad_image: &[f64], grad_texture: &mut [f64]) {
        if self.filter.is_identity() {
            self.scatter(grad_image, grad_texture);
        } else {
            let (w, h) = self.filter.dims();
            let mut filtered = vec![0.0; w * h * 3];
            self.scatter(grad_image, &mut filtered);
            self.filter.backward(&filtered, grad_texture);
        }
    }

    fn scatter(&self, grad_image: &[f64], grad_texture: &mut [f64]) {
        for tap in &self.taps {
            let p = tap.pixel as usize * 3;
            for k in 0..4 {
                let t = tap.texels[k] as usize * 3;
                let w = tap.weights[k];
                for c in 0..3 {
                    grad_texture[t + c] += w * grad_image[p + c];
                }
            }
        }
    }
}

/// What a rasterizer face draws.
#[derive(Clone, Copy)]
enum Material {
    Solid([f64; 3]),
    /// Shirt face; `panel` marks faces that may carry the patch.
    Garment { face: usize, panel: bool },
}

struct Projected {
    /// Screen coordinates after fitting, and camera-space depth.
    screen: Vec<[f64; 3]>,
    camera: Vec<Vec3>,
}

/// Model → camera transform for the given pose.
fn to_camera(v: &Vec3, p: &RenderParams) -> Vec3 {
    let (sa, ca) = p.azimuth.sin_cos();
    let x = v.x;
    let y = v.y - MODEL_HEIGHT / 2.0;
    let z = v.z;
    // yaw about the vertical axis
    let xr = ca * x + sa * z;
    let zr = -sa * x + ca * z;
    // pitch: the camera looks down by `elevation`
    let (se, ce) = p.elevation.sin_cos();
    let yr = y * ce - zr * se;
    let zr2 = zr * ce + y * se;
    Vec3::new(xr, -yr, p.distance - zr2)
}

fn project(meshes: &[&GarmentMesh], p: &RenderParams, cam: &Camera, target: &BoundingBox) -> Result<Projected> {
    let camera: Vec<Vec3> = meshes
        .iter()
        .flat_map(|m| m.vertices.iter().map(|v| to_camera(v, p)))
        .collect();
    if camera.is_empty() || camera.iter().any(|c| c.z <= NEAR_PLANE) {
        return Err(Error::domain("model is behind the camera"));
    }
    let raw: Vec<[f64; 2]> = camera
        .iter()
        .map(|c| [cam.focal * c.x / c.z, cam.focal * c.y / c.z])
        .collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for r in &raw {
        x0 = x0.min(r[0]);
        x1 = x1.max(r[0]);
        y0 = y0.min(r[1]);
        y1 = y1.max(r[1]);
    }
    // fit the silhouette inside the target box, centered
    let s = (target.width() / (x1 - x0)).min(target.height() / (y1 - y0));
    let (tcx, tcy) = target.center();
    let (pcx, pcy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let screen = raw
        .iter()
        .zip(&camera)
        .map(|(r, c)| [tcx + s * (r[0] - pcx), tcy + s * (r[1] - pcy), c.z])
        .collect();
    Ok(Projected { screen, camera })
}

fn face_shade(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let mut n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len == 0.0 {
        return AMBIENT;
    }
    n /= len;
    // face the camera
    if n.z > 0.0 {
        n = -n;
    }
    let l = Vec3::new(LIGHT[0], LIGHT[1], LIGHT[2]).normalize();
    AMBIENT + DIFFUSE * n.dot(&l).max(0.0)
}

/// Renders body and garment at `params`, fitted into `target`, on a
/// `width x height` canvas. Garment panel faces sample `texture` when given.
#[allow(clippy::too_many_arguments)]
pub fn rasterize(
    model: &Humanoid,
    garment: &GarmentMesh,
    texture: Option<&Image>,
    palette: &Palette,
    params: &RenderParams,
    cam: &Camera,
    target: &BoundingBox,
    width: usize,
    height: usize,
) -> Result<RenderOutput> {
    if garment.vertices.len() != model.garment.vertices.len() || garment.faces != model.garment.faces {
        return Err(Error::domain("garment topology does not match the model"));
    }
    if let Some(t) = texture {
        if t.width() == 0 || t.height() == 0 {
            return Err(Error::domain("empty texture"));
        }
    }
    target.validate()?;
    let proj = project(&[&model.body, garment], params, cam, target)?;
    let nb = model.body.vertices.len();

    let mut faces: Vec<([usize; 3], Material)> = Vec::new();
    for (f, part) in model.body.faces.iter().zip(&model.body_parts) {
        let color = match part {
            BodyPart::Head => palette.skin,
            BodyPart::Torso | BodyPart::Arm => palette.shirt,
            BodyPart::Leg => palette.pants,
        };
        faces.push((*f, Material::Solid(color)));
    }
    for (k, f) in garment.faces.iter().enumerate() {
        faces.push((
            [f[0] + nb, f[1] + nb, f[2] + nb],
            Material::Garment {
                face: k,
                panel: model.panel_faces[k],
            },
        ));
    }

    let npx = width * height;
    let mut depth = vec![f64::INFINITY; npx];
    // winning face and perspective-correct barycentrics per pixel
    let mut owner: Vec<u32> = vec![u32::MAX; npx];
    let mut bary = vec![[0.0f64; 3]; npx];
    for (fi, (f, _)) in faces.iter().enumerate() {
        let [a, b, c] = [proj.screen[f[0]], proj.screen[f[1]], proj.screen[f[2]]];
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let xmin = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let ymin = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let xmax = (a[0].max(b[0]).max(c[0]).ceil().max(0.0) as usize).min(width);
        let ymax = (a[1].max(b[1]).max(c[1]).ceil().max(0.0) as usize).min(height);
        for y in ymin..ymax {
            let py = y as f64 + 0.5;
            for x in xmin..xmax {
                let px = x as f64 + 0.5;
                let w0 = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / area;
                let w1 = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let inv_z = w0 / a[2] + w1 / b[2] + w2 / c[2];
                let z = 1.0 / inv_z;
                let i = y * width + x;
                if z < depth[i] {
                    depth[i] = z;
                    owner[i] = fi as u32;
                    bary[i] = [w0 / a[2] * z, w1 / b[2] * z, w2 / c[2] * z];
                }
            }
        }
    }

    let (tw, th) = texture.map_or((1, 1), Image::dims);
    let filter = BoxFilter::for_scale(tw, th, panel_scale(model, &proj, nb, tw, th));
    let filtered = texture.filter(|_| !filter.is_identity()).map(|t| filter.apply(t));
    let texture = filtered.as_ref().or(texture);

    let shades: Vec<f64> = faces
        .iter()
        .map(|(f, _)| face_shade(&proj.camera[f[0]], &proj.camera[f[1]], &proj.camera[f[2]]))
        .collect();

    let mut image = Image::new(width, height);
    let mut mask = Mask::new(width, height);
    let mut taps = Vec::new();
    for i in 0..npx {
        let fi = owner[i];
        if fi == u32::MAX {
            continue;
        }
        let (x, y) = (i % width, i / width);
        mask.set(x, y, true);
        let (_, material) = faces[fi as usize];
        let shade = shades[fi as usize];
        let base = match material {
            Material::Solid(color) => color,
            Material::Garment { face, panel } => {
                let textured = texture.filter(|_| panel).and_then(|tex| {
                    let gf = garment.faces[face];
                    let w = bary[i];
                    let mut uv = [0.0; 2];
                    for k in 0..3 {
                        let t = model.garment_uv[gf[k]];
                        uv[0] += w[k] * t[0];
                        uv[1] += w[k] * t[1];
                    }
                    if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                        return None;
                    }
                    Some((tex, uv))
                });
                match textured {
                    Some((tex, uv)) => {
                        let tap = texel_tap(tex, uv, shade, i as u32);
                        let mut rgb = [0.0; 3];
                        for k in 0..4 {
                            let t = tex.data();
                            let o = tap.texels[k] as usize * 3;
                            for c in 0..3 {
                                rgb[c] += tap.weights[k] * t[o + c];
                            }
                        }
                        image.set(x, y, rgb);
                        taps.push(tap);
                        continue;
                    }
                    None => palette.shirt,
                }
            }
        };
        image.set(x, y, [base[0] * shade, base[1] * shade, base[2] * shade]);
    }

    let (x0, y0, x1, y1) = mask
        .bounds()
        .ok_or_else(|| Error::domain("model projects outside the canvas"))?;
    Ok(RenderOutput {
        image,
        mask,
        taps,
        silhouette: BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)?,
        filter,
    })
}

/// Average screen pixels per texel along one axis over the patch panel,
/// from the ratio of projected area to texture area.
fn panel_scale(model: &Humanoid, proj: &Projected, nb: usize, tw: usize, th: usize) -> f64 {
    let (mut screen, mut texels) = (0.0, 0.0);
    for (f, &panel) in model.garment.faces.iter().zip(&model.panel_faces) {
        if !panel {
            continue;
        }
        let [a, b, c] = [proj.screen[f[0] + nb], proj.screen[f[1] + nb], proj.screen[f[2] + nb]];
        screen += ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
        let [ua, ub, uc] = [model.garment_uv[f[0]], model.garment_uv[f[1]], model.garment_uv[f[2]]];
        let uv = ((ub[0] - ua[0]) * (uc[1] - ua[1]) - (ub[1] - ua[1]) * (uc[0] - ua[0])).abs();
        texels += uv * (tw * th) as f64;
    }
    if texels > 0.0 {
        (screen / texels).sqrt()
    } else {
        1.0
    }
}

/// Bilinear texel lookup at UV `(u, v)` with the shade folded into the weights.
fn texel_tap(tex: &Image, uv: [f64; 2], shade: f64, pixel: u32) -> TexelTap {
    let (w, h) = tex.dims();
    let tx = (uv[0] * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let ty = (uv[1] * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = tx.floor() as usize;
    let y0 = ty.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = tx - x0 as f64;
    let fy = ty - y0 as f64;
    TexelTap {
        pixel,
        texels: [
            (y0 * w + x0) as u32,
            (y0 * w + x1) as u32,
            (y1 * w + x0) as u32,
            (y1 * w + x1) as u32,
        ],
        weights: [
            shade * (1.0 - fx) * (1.0 - fy),
            shade * fx * (1.0 - fy),
            shade * (1.0 - fx) * fy,
            shade * fx * fy,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::humanoid;
    use crate::scene::timespace::derive_render_params;

    fn render_at(d: f64, tex: Option<&Image>) -> RenderOutput {
        let model = humanoid().unwrap();
        let cam = Camera::for_image(416, 416);
        let h = cam.box_height(d);
        let target = BoundingBox::from_center(208.0, 208.0, h * 0.45, h).unwrap();
        let (p, _) = derive_render_params(&target, [0.0, 1.0], &cam).unwrap();
        rasterize(&model, &model.garment, tex, &Palette::default(), &p, &cam, &target, 416, 416).unwrap()
    }

    #[test]
    fn black_patch_is_dark() {
        let tex = Image::new(32, 32);
        let out = render_at(2.0, Some(&tex));
        assert!(!out.taps.is_empty());
        for tap in &out.taps {
            let p = tap.pixel as usize;
            let px = out.image.get(p % 416, p / 416);
            assert!(px.iter().all(|&v| v <= AMBIENT + 1e-12));
        }
    }

    #[test]
    fn minified_texture_backward_is_the_adjoint() {
        let tex = Image::from_vec(300, 300, (0..270_000).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect()).unwrap();
        let out = render_at(3.0, Some(&tex));
        assert!(out.filter.factor > 1, "{:?}", out.filter);
        let g: Vec<f64> = (0..416 * 416 * 3).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.5).collect();
        let mut back = vec![0.0; tex.data().len()];
        out.backward(&g, &mut back);
        let lhs: f64 = out
            .taps
            .iter()
            .flat_map(|t| (0..3).map(move |c| t.pixel as usize * 3 + c))
            .map(|i| out.image.data()[i] * g[i])
            .sum();
        let rhs: f64 = tex.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn silhouette_shrinks_with_distance() {
        let mut last = usize::MAX;
        for d in [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0] {
            let n = render_at(d, None).mask.count();
            assert!(n < last, "d={d}: {n} >= {last}");
            last = n;
        }
    }

    #[test]
    fn rendered_pixels_are_masked() {
        let tex = Image::filled(16, 16, [1.0, 1.0, 1.0]);
        let out = render_at(2.5, Some(&tex));
        for y in 0..416 {
            for x in 0..416 {
                if out.image.get(x, y).iter().any(|&v| v > 0.0) {
                    assert!(out.mask.get(x, y));
                }
            }
        }
    }

    #[test]
    fn behind_camera_rejected() {
        let model = humanoid().unwrap();
        let cam = Camera::for_image(416, 416);
        let target = BoundingBox::new(100.0, 10.0, 200.0, 400.0).unwrap();
        let p = RenderParams {
            scale: 1.0,
            distance: 0.01,
            elevation: 0.0,
            azimuth: 0.0,
            orientation: [0.0, 1.0],
        };
        assert!(rasterize(&model, &model.garment, None, &Palette::default(), &p, &cam, &target, 416, 416).is_err());
    }
}
