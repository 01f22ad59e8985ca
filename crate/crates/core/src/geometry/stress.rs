//! Per-vertex stress and high-stress candidate selection.

use super::mesh::GarmentMesh;
use crate::error::{Error, Result};

/// Non-negative per-vertex stress, index-aligned with mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct StressField {
    pub sigma: Vec<f64>,
}

impl StressField {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.sigma.iter().cloned().fold(0.0, f64::max)
    }
}

/// Accumulates `w_ij * |v_j - v_i|` over each vertex's neighbours.
pub fn compute_vertex_stress(mesh: &GarmentMesh) -> Result<StressField> {
    if mesh.vertices.is_empty() {
        return Err(Error::domain("empty mesh"));
    }
    let mut sigma = vec![0.0; mesh.vertices.len()];
    for (&(i, j), &w) in mesh.edges.iter().zip(&mesh.adjacency_weights) {
        let contrib = w * (mesh.vertices[j] - mesh.vertices[i]).norm();
        sigma[i] += contrib;
        sigma[j] += contrib;
    }
    Ok(StressField { sigma })
}

/// Indices with `sigma > sigma_thres`, ordered by stress descending and then
/// by ascending index.
pub fn select_high_stress(stress: &StressField, sigma_thres: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..stress.len())
        .filter(|&i| stress.sigma[i] > sigma_thres)
        .collect();
    idx.sort_by(|&a, &b| {
        stress.sigma[b]
            .total_cmp(&stress.sigma[a])
            .then(a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::{AdjacencyWeighting, Vec3};

    #[test]
    fn isolated_vertex_has_zero_stress() {
        let m = GarmentMesh::from_faces(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(5.0, 5.0, 5.0)],
            vec![[0, 1, 2]],
            AdjacencyWeighting::Uniform,
        )
        .unwrap();
        let s = compute_vertex_stress(&m).unwrap();
        assert_eq!(s.sigma[3], 0.0);
    }

    #[test]
    fn unit_edge_gives_unit_stress() {
        let m = GarmentMesh {
            vertices: vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)],
            edges: vec![(0, 1)],
            adjacency_weights: vec![1.0],
            faces: vec![],
        };
        let s = compute_vertex_stress(&m).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0]);
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let m = GarmentMesh {
            vertices: vec![],
            edges: vec![],
            adjacency_weights: vec![],
            faces: vec![],
        };
        let err = compute_vertex_stress(&m).unwrap_err();
        assert!(err.to_string().contains("empty mesh"));
    }

    #[test]
    fn threshold_selection_orders_by_stress() {
        let s = StressField {
            sigma: vec![0.9, 0.7, 1.2],
        };
        assert_eq!(select_high_stress(&s, 0.8), vec![2, 0]);
        assert!(select_high_stress(&s, 5.0).is_empty());
    }

    #[test]
    fn ties_break_by_index() {
        let s = StressField {
            sigma: vec![1.0, 2.0, 1.0, 2.0],
        };
        assert_eq!(select_high_stress(&s, 0.0), vec![1, 3, 0, 2]);
    }
}
