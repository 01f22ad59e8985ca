//! Stochastic thin-plate-spline deformation with stress-capped displacements.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::control::ControlPointSet;
use super::mesh::{GarmentMesh, Vec3};
use super::stress::StressField;
use crate::error::{Error, Result};

/// Diagonal ridge added to the kernel matrix before solving.
pub const RIDGE: f64 = 1e-8;

/// Radial basis function used by the spline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// `phi(r) = r`, the biharmonic kernel in three dimensions.
    Biharmonic,
    /// `phi(r) = exp(-r^2 / (2 s^2))`.
    Gaussian { sigma: f64 },
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Biharmonic
    }
}

impl Kernel {
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Kernel::Biharmonic => r,
            Kernel::Gaussian { sigma } => (-r * r / (2.0 * sigma * sigma)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsConfig {
    pub kernel: Kernel,
    /// Scale `delta` of the Gaussian perturbation.
    pub noise_scale: f64,
    /// Covariance of the per-vertex perturbation, row-major 3x3.
    pub noise_covariance: [[f64; 3]; 3],
    /// Base displacement cap `delta_max`.
    pub max_displacement: f64,
    /// Stress gain `lambda` widening the cap at high-stress vertices.
    pub stress_gain: f64,
    pub rng_seed: u64,
}

impl Default for TpsConfig {
    fn default() -> Self {
        TpsConfig {
            kernel: Kernel::Biharmonic,
            noise_scale: 0.004,
            noise_covariance: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            max_displacement: 0.02,
            stress_gain: 0.5,
            rng_seed: 0,
        }
    }
}

impl TpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_displacement > 0.0) {
            return Err(Error::domain("max_displacement must be positive"));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::domain("noise_scale must be non-negative"));
        }
        if !(self.stress_gain >= 0.0) {
            return Err(Error::domain("stress_gain must be non-negative"));
        }
        if let Kernel::Gaussian { sigma } = self.kernel {
            if !(sigma > 0.0) {
                return Err(Error::domain("gaussian kernel width must be positive"));
            }
        }
        noise_factor(&self.noise_covariance).map(|_| ())
    }
}

/// Square-root factor `L` with `L L^T = cov`. Fails unless `cov` is symmetric
/// positive semidefinite.
fn noise_factor(cov: &[[f64; 3]; 3]) -> Result<Matrix3<f64>> {
    let m = Matrix3::from_fn(|i, j| cov[i][j]);
    if (m - m.transpose()).abs().max() > 1e-12 {
        return Err(Error::domain("noise covariance must be symmetric"));
    }
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
        return Err(Error::domain("noise covariance must be positive semidefinite"));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix3::from_diagonal(&sqrt))
}

/// Spline weights, one 3D vector per control point.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsWeights {
    pub weights: Vec<Vec3>,
}

fn kernel_matrix(points: &[Vec3], kernel: Kernel) -> DMatrix<f64> {
    let k = points.len();
    DMatrix::from_fn(k, k, |i, j| kernel.eval((points[i] - points[j]).norm()))
}

/// Solves `sum_k w_k phi(|c_m - c_k|) = offset_m` for every control point.
///
/// The system is factored with `RIDGE` on the diagonal. When the unregularized
/// matrix is well posed, residual refinement against it recovers the exact
/// interpolant; otherwise (e.g. a single biharmonic point, where `phi(0) = 0`)
/// the ridge solution is returned.
pub fn solve_tps_weights(control: &ControlPointSet, kernel: Kernel) -> Result<TpsWeights> {
    let k = control.len();
    if k == 0 {
        return Ok(TpsWeights { weights: vec![] });
    }
    if control.target_offsets.len() != k || control.positions.len() != k {
        return Err(Error::domain("control set arrays are misaligned"));
    }
    let phi = kernel_matrix(&control.positions, kernel);
    let mut reg = phi.clone();
    for i in 0..k {
        reg[(i, i)] += RIDGE;
    }
    let rhs = DMatrix::from_fn(k, 3, |i, c| control.target_offsets[i][c]);
    let lu = reg.clone().lu();
    let mut w = lu.solve(&rhs).filter(|w| w.iter().all(|v| v.is_finite()));
    if w.is_none() {
        let sv = reg.singular_values();
        let cond = sv.max() / sv.min();
        return Err(Error::numerical(format!(
            "tps kernel matrix singular after ridge regularization (condition estimate {cond:.3e})"
        )));
    }
    let mut sol = w.take().unwrap();
    let mut res_norm = (&rhs - &phi * &sol).norm();
    for _ in 0..4 {
        if res_norm == 0.0 {
            break;
        }
        let correction = match lu.solve(&(&rhs - &phi * &sol)) {
            Some(c) => c,
            None => break,
        };
        let cand = &sol + correction;
        let cand_res = (&rhs - &phi * &cand).norm();
        if !(cand_res < res_norm) {
            break;
        }
        sol = cand;
        res_norm = cand_res;
    }
    Ok(TpsWeights {
        weights: (0..k)
            .map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]))
            .collect(),
    })
}

/// Evaluates the spline displacement `sum_k w_k phi(|v - c_k|)`.
pub fn spline_displacement(v: &Vec3, control: &ControlPointSet, w: &TpsWeights, kernel: Kernel) -> Vec3 {
    control
        .positions
        .iter()
        .zip(&w.weights)
        .fold(Vec3::zeros(), |acc, (c, wk)| acc + wk * kernel.eval((v - c).norm()))
}

/// Draws one `N(0, Sigma)` sample per vertex from `cfg.rng_seed`.
pub fn sample_noise(cfg: &TpsConfig, n: usize) -> Result<Vec<Vec3>> {
    let l = noise_factor(&cfg.noise_covariance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    Ok((0..n)
        .map(|_| {
            let z = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            l * z
        })
        .collect())
}

/// Scales a raw displacement so its norm does not exceed
/// `max_displacement * (1 + stress_gain * sigma)`.
#[inline]
pub fn cap_displacement(raw: Vec3, sigma: f64, cfg: &TpsConfig) -> Vec3 {
    let cap = cfg.max_displacement * (1.0 + cfg.stress_gain * sigma);
    let n = raw.norm();
    if n == 0.0 {
        return raw;
    }
    raw * (cap / n).min(1.0)
}

/// Applies the stochastic spline to every vertex and caps each displacement.
/// Topology is unchanged.
pub fn deform(
    mesh: &GarmentMesh,
    control: &ControlPointSet,
    stress: &StressField,
    cfg: &TpsConfig,
) -> Result<GarmentMesh> {
    cfg.validate()?;
    if stress.len() != mesh.vertices.len() {
        return Err(Error::domain("stress field is not aligned with the mesh"));
    }
    let w = solve_tps_weights(control, cfg.kernel)?;
    let noise = if cfg.noise_scale > 0.0 {
        sample_noise(cfg, mesh.vertices.len())?
    } else {
        vec![Vec3::zeros(); mesh.vertices.len()]
    };
    let vertices = mesh
        .vertices
        .iter()
        .zip(&noise)
        .zip(&stress.sigma)
        .map(|((v, r), &sigma)| {
            let raw = spline_displacement(v, control, &w, cfg.kernel) + r * cfg.noise_scale;
            v + cap_displacement(raw, sigma, cfg)
        })
        .collect();
    Ok(mesh.with_vertices(vertices))
}
