//! Procedural low-poly humanoid with a separate shirt mesh.
//!
//! Model space: y up with the feet at `y = 0`, x to the model's left as seen
//! by a facing camera, z out of the chest. Units are meters.

use std::f64::consts::PI;

use super::mesh::{AdjacencyWeighting, GarmentMesh, Vec3};
use crate::error::Result;

/// Standing height of the generated model.
pub const MODEL_HEIGHT: f64 = 1.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyPart {
    Head,
    Torso,
    Arm,
    Leg,
}

/// Body mesh, per-face part labels, and the shirt with its front-panel UVs.
#[derive(Debug, Clone)]
pub struct Humanoid {
    pub body: GarmentMesh,
    pub body_parts: Vec<BodyPart>,
    pub garment: GarmentMesh,
    /// Per-vertex texture coordinates; the patch occupies `[0, 1]^2`.
    pub garment_uv: Vec<[f64; 2]>,
    /// Faces eligible for the patch texture (front half of the shirt).
    pub panel_faces: Vec<bool>,
}

/// One ring of a tube: center `(cx, y, cz)` and elliptical radii.
#[derive(Clone, Copy)]
struct Ring {
    cx: f64,
    y: f64,
    cz: f64,
    rx: f64,
    rz: f64,
}

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    parts: Vec<BodyPart>,
}

impl Builder {
    fn tube(&mut self, rings: &[Ring], sides: usize, caps: bool, part: BodyPart) {
        let base = self.vertices.len();
        for r in rings {
            for s in 0..sides {
                let t = 2.0 * PI * s as f64 / sides as f64;
                self.vertices
                    .push(Vec3::new(r.cx + r.rx * t.sin(), r.y, r.cz + r.rz * t.cos()));
            }
        }
        for ri in 0..rings.len() - 1 {
            for s in 0..sides {
                let a = base + ri * sides + s;
                let b = base + ri * sides + (s + 1) % sides;
                let c = a + sides;
                let d = b + sides;
                self.faces.push([a, b, c]);
                self.faces.push([b, d, c]);
                self.parts.extend([part, part]);
            }
        }
        if caps {
            for (ri, ring) in [(0, rings[0]), (rings.len() - 1, rings[rings.len() - 1])] {
                let center = self.vertices.len();
                self.vertices.push(Vec3::new(ring.cx, ring.y, ring.cz));
                for s in 0..sides {
                    let a = base + ri * sides + s;
                    let b = base + ri * sides + (s + 1) % sides;
                    self.faces.push([center, a, b]);
                    self.parts.push(part);
                }
            }
        }
    }

    fn sphere(&mut self, center: Vec3, radius: f64, stacks: usize, sides: usize, part: BodyPart) {
        let rings: Vec<Ring> = (1..stacks)
            .map(|i| {
                let phi = PI * i as f64 / stacks as f64;
                Ring {
                    cx: center.x,
                    y: center.y + radius * phi.cos(),
                    cz: center.z,
                    rx: radius * phi.sin(),
                    rz: radius * phi.sin(),
                }
            })
            .collect();
        let base = self.vertices.len();
        self.tube(&rings, sides, false, part);
        let top = self.vertices.len();
        self.vertices.push(center + Vec3::new(0.0, radius, 0.0));
        let bottom = self.vertices.len();
        self.vertices.push(center - Vec3::new(0.0, radius, 0.0));
        let last = base + (rings.len() - 1) * sides;
        for s in 0..sides {
            let s1 = (s + 1) % sides;
            self.faces.push([top, base + s1, base + s]);
            self.faces.push([bottom, last + s, last + s1]);
            self.parts.extend([part, part]);
        }
    }
}

fn straight(cx: f64, cz: f64, ys: &[f64], radii: &[(f64, f64)]) -> Vec<Ring> {
    ys.iter()
        .zip(radii)
        .map(|(&y, &(rx, rz))| Ring { cx, y, cz, rx, rz })
        .collect()
}

/// Shirt tube sampling: `sides` around by `rings` along the torso.
pub const SHIRT_SIDES: usize = 8;
pub const SHIRT_RINGS: usize = 6;
pub const SHIRT_BOTTOM: f64 = 0.93;
pub const SHIRT_TOP: f64 = 1.45;
/// Front panel (the patch area) in model space.
pub const PANEL_CENTER_Y: f64 = 1.19;
pub const PANEL_SIZE: f64 = 0.3;

/// Builds the fixture humanoid.
pub fn humanoid() -> Result<Humanoid> {
    let mut b = Builder::default();
    // legs
    for side in [-1.0, 1.0] {
        b.tube(
            &straight(
                side * 0.09,
                0.0,
                &[0.02, 0.45, 0.92],
                &[(0.055, 0.06), (0.06, 0.065), (0.08, 0.085)],
            ),
            6,
            true,
            BodyPart::Leg,
        );
    }
    // torso, kept inside the shirt
    b.tube(
        &straight(
            0.0,
            0.0,
            &[0.9, 1.2, 1.44],
            &[(0.15, 0.085), (0.155, 0.085), (0.15, 0.085)],
        ),
        8,
        true,
        BodyPart::Torso,
    );
    // arms, hanging slightly outward
    for side in [-1.0, 1.0] {
        let rings = [
            Ring { cx: side * 0.215, y: 1.43, cz: 0.0, rx: 0.05, rz: 0.05 },
            Ring { cx: side * 0.24, y: 1.15, cz: 0.0, rx: 0.045, rz: 0.045 },
            Ring { cx: side * 0.26, y: 0.86, cz: 0.01, rx: 0.035, rz: 0.04 },
        ];
        b.tube(&rings, 6, true, BodyPart::Arm);
    }
    // neck and head
    b.tube(
        &straight(0.0, 0.0, &[1.43, 1.53], &[(0.05, 0.05), (0.05, 0.05)]),
        6,
        false,
        BodyPart::Head,
    );
    b.sphere(Vec3::new(0.0, 1.635, 0.01), 0.11, 5, 8, BodyPart::Head);

    let body = GarmentMesh::from_faces(b.vertices, b.faces, AdjacencyWeighting::Uniform)?;

    let mut g = Builder::default();
    let rings: Vec<Ring> = (0..SHIRT_RINGS)
        .map(|i| {
            let t = i as f64 / (SHIRT_RINGS - 1) as f64;
            let y = SHIRT_BOTTOM + t * (SHIRT_TOP - SHIRT_BOTTOM);
            // narrower at the waist and the neckline
            let rx = 0.185 + 0.015 * (PI * t).sin() - 0.02 * t * t;
            let rz = 0.115 + 0.01 * (PI * t).sin();
            Ring { cx: 0.0, y, cz: 0.0, rx, rz }
        })
        .collect();
    g.tube(&rings, SHIRT_SIDES, false, BodyPart::Torso);
    let garment = GarmentMesh::from_faces(g.vertices, g.faces, AdjacencyWeighting::Uniform)?;
    let garment_uv = garment.vertices.iter().map(|v| panel_uv(v)).collect();
    let panel_faces = garment
        .faces
        .iter()
        .map(|f| f.iter().all(|&i| garment.vertices[i].z > -1e-9))
        .collect();
    Ok(Humanoid {
        body,
        body_parts: b.parts,
        garment,
        garment_uv,
        panel_faces,
    })
}

/// Planar front projection of a rest-pose shirt point into patch UV space.
pub fn panel_uv(v: &Vec3) -> [f64; 2] {
    let top = PANEL_CENTER_Y + PANEL_SIZE / 2.0;
    [(v.x + PANEL_SIZE / 2.0) / PANEL_SIZE, (top - v.y) / PANEL_SIZE]
}
