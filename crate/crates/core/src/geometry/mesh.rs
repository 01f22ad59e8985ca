//! Triangle meshes with weighted vertex adjacency.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// How per-edge adjacency weights are assigned when a mesh is built from faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjacencyWeighting {
    /// `w_ij = 1` for every edge.
    #[default]
    Uniform,
    /// `w_ij = 2 / (deg_i + deg_j)`, symmetric in `i` and `j`.
    InverseDegree,
}

/// Vertex/edge mesh carrying adjacency weights and triangle faces.
///
/// Edges are stored once per undirected pair `(i, j)` with `i < j`, so the
/// adjacency is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GarmentMesh {
    pub vertices: Vec<Vec3>,
    pub edges: Vec<(usize, usize)>,
    pub adjacency_weights: Vec<f64>,
    pub faces: Vec<[usize; 3]>,
}

impl GarmentMesh {
    /// Builds a mesh whose edges are the unique sides of `faces`.
    pub fn from_faces(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        weighting: AdjacencyWeighting,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for f in &faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut mesh = GarmentMesh {
            vertices,
            adjacency_weights: vec![1.0; edges.len()],
            edges,
            faces,
        };
        mesh.validate()?;
        if weighting == AdjacencyWeighting::InverseDegree {
            let deg = mesh.degrees();
            for (w, &(i, j)) in mesh.adjacency_weights.iter_mut().zip(&mesh.edges) {
                *w = 2.0 / (deg[i] + deg[j]) as f64;
            }
        }
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.adjacency_weights.len() != self.edges.len() {
            return Err(Error::domain("one adjacency weight per edge required"));
        }
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            if i >= n || j >= n || i == j {
                return Err(Error::domain(format!("edge {k} ({i}, {j}) is invalid")));
            }
        }
        if let Some(k) = self
            .adjacency_weights
            .iter()
            .position(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::domain(format!("adjacency weight {k} is negative")));
        }
        for (k, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::domain(format!("face {k} {f:?} is degenerate")));
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::domain("non-finite vertex"));
        }
        Ok(())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        GarmentMesh {
            vertices,
            ..self.clone()
        }
    }

    /// Parses Wavefront OBJ text, keeping `v` and `f` records. Polygons are
    /// fan-triangulated; texture/normal indices are ignored.
    pub fn parse_obj(text: &str, weighting: AdjacencyWeighting) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::domain(format!("obj line {}: {e}", lineno + 1)))?;
                    if c.len() != 3 {
                        return Err(Error::domain(format!(
                            "obj line {}: vertex needs 3 coordinates",
                            lineno + 1
                        )));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in it {
                        let head = tok.split('/').next().unwrap_or("");
                        let raw: i64 = head.parse().map_err(|_| {
                            Error::domain(format!("obj line {}: bad face index {tok}", lineno + 1))
                        })?;
                        let resolved = if raw > 0 {
                            raw - 1
                        } else {
                            vertices.len() as i64 + raw
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(Error::domain(format!(
                                "obj line {}: face index {raw} out of range",
                                lineno + 1
                            )));
                        }
                        idx.push(resolved as usize);
                    }
                    if idx.len() < 3 {
                        return Err(Error::domain(format!(
                            "obj line {}: face needs 3 vertices",
                            lineno + 1
                        )));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::from_faces(vertices, faces, weighting)
    }

    pub fn load_obj(path: &Path, weighting: AdjacencyWeighting) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text, weighting)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for f in &self.faces {
            s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        s
    }
}
