//! Isolation-constrained control point selection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mesh::Vec3;
use super::stress::StressField;
use crate::error::{Error, Result};

/// Control points chosen among high-stress vertices, with their target
/// displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointSet {
    pub indices: Vec<usize>,
    pub positions: Vec<Vec3>,
    pub target_offsets: Vec<Vec3>,
    /// Set when there were no candidates; the deformation is then the identity
    /// (plus noise).
    pub no_candidates: bool,
}

impl ControlPointSet {
    pub fn empty() -> Self {
        ControlPointSet {
            indices: Vec::new(),
            positions: Vec::new(),
            target_offsets: Vec::new(),
            no_candidates: true,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Replaces the target offsets with uniformly random directions whose
    /// magnitudes are drawn from `U(0, max_magnitude)`.
    pub fn sample_target_offsets<R: Rng + ?Sized>(&mut self, max_magnitude: f64, rng: &mut R) {
        self.target_offsets = (0..self.indices.len())
            .map(|_| {
                let dir = loop {
                    let g = Vec3::new(
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    );
                    let n = g.norm();
                    if n > 1e-12 {
                        break g / n;
                    }
                };
                dir * rng.random_range(0.0..=max_magnitude)
            })
            .collect();
    }
}

/// Number of control points to aim for: `max(n_min, floor(rho * |S|))`.
pub fn control_target(n_candidates: usize, rho: f64, n_min: usize) -> usize {
    n_min.max((rho * n_candidates as f64).floor() as usize)
}

/// Greedy scan of `candidates` (already in descending-stress order). A
/// candidate `p_i` is accepted when every accepted `p_j` lies at least
/// `gamma / sigma_i` away. The scan stops once the target count is reached.
pub fn select_control_points(
    candidates: &[usize],
    stress: &StressField,
    positions: &[Vec3],
    gamma: f64,
    rho: f64,
    n_min: usize,
) -> Result<ControlPointSet> {
    if !(gamma > 0.0) {
        return Err(Error::domain("gamma must be positive"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::domain("rho must lie in (0, 1]"));
    }
    if candidates.is_empty() {
        log::warn!("no high-stress candidates; deformation reduces to noise only");
        return Ok(ControlPointSet::empty());
    }
    if let Some(&bad) = candidates
        .iter()
        .find(|&&i| i >= positions.len() || i >= stress.len())
    {
        return Err(Error::domain(format!("candidate {bad} out of range")));
    }
    let target = control_target(candidates.len(), rho, n_min);
    let mut indices: Vec<usize> = Vec::with_capacity(target);
    for &i in candidates {
        if indices.len() >= target {
            break;
        }
        // sigma == 0 makes the radius infinite: only admissible as the first point.
        let radius = gamma / stress.sigma[i];
        let isolated = indices
            .iter()
            .all(|&j| (positions[i] - positions[j]).norm() >= radius);
        if isolated && !indices.contains(&i) {
            indices.push(i);
        }
    }
    let positions: Vec<Vec3> = indices.iter().map(|&i| positions[i]).collect();
    Ok(ControlPointSet {
        target_offsets: vec![Vec3::zeros(); indices.len()],
        indices,
        positions,
        no_candidates: false,
    })
}
