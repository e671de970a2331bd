//! Conductivity equation, power densities and simulated measurements.

use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::fem::{self, DirichletBc, Vector2};
use crate::mesh::Mesh;
use crate::sparse::{lu, LuFactor, SparseMatrix};

pub const DEFAULT_SIGMA_MIN: f64 = 1e-12;

/// Nodal conductivity bounded below by `sigma_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conductivity {
    values: Vec<f64>,
    sigma_min: f64,
}

impl Conductivity {
    pub fn new(mesh: &Mesh, values: Vec<f64>, sigma_min: f64) -> Result<Self> {
        if !(sigma_min > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_min must be positive, got {sigma_min}")));
        }
        if values.len() != mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_nodes(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= sigma_min)) {
            return Err(Error::InvalidArgument(format!(
                "conductivity {} at node {i} is below sigma_min {sigma_min}",
                values[i]
            )));
        }
        Ok(Self { values, sigma_min })
    }

    /// Clamp `values` from below instead of rejecting them.
    pub fn clamped(mesh: &Mesh, mut values: Vec<f64>, sigma_min: f64) -> Result<Self> {
        for v in &mut values {
            if v.is_nan() {
                return Err(Error::InvalidArgument("NaN conductivity".into()));
            }
            *v = v.max(sigma_min);
        }
        Self::new(mesh, values, sigma_min)
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Result<Self> {
        Self::new(mesh, vec![c; mesh.n_nodes()], DEFAULT_SIGMA_MIN.min(c))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `λ σ` for `λ > 0`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {lambda}")));
        }
        Ok(Self {
            values: self.values.iter().map(|v| lambda * v).collect(),
            sigma_min: (self.sigma_min * lambda).min(self.sigma_min),
        })
    }
}

impl Deref for Conductivity {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Provenance of measurement values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    Exact,
    Gaussian { std: f64, seed: u64 },
}

/// Boundary conditions and the nodal power densities they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub bcs: Vec<DirichletBc>,
    pub data: Vec<Vec<f64>>,
    pub noise: Noise,
}

impl MeasurementSet {
    pub fn new(bcs: Vec<DirichletBc>, data: Vec<Vec<f64>>, noise: Noise) -> Result<Self> {
        if bcs.is_empty() {
            return Err(Error::InvalidArgument("at least one measurement is required".into()));
        }
        if bcs.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: bcs.len(),
                got: data.len(),
            });
        }
        let n = data[0].len();
        if let Some(d) = data.iter().find(|d| d.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: d.len(),
            });
        }
        Ok(Self { bcs, data, noise })
    }

    pub fn m(&self) -> usize {
        self.bcs.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.data[0].len()
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.n_nodes() == mesh.n_nodes() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: mesh.n_nodes(),
                got: self.n_nodes(),
            })
        }
    }

    /// Measurements at the given 0-based indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.m()) {
            return Err(Error::InvalidArgument(format!(
                "measurement index {i} out of range for {} measurements",
                self.m()
            )));
        }
        Self::new(
            indices.iter().map(|&i| self.bcs[i].clone()).collect(),
            indices.iter().map(|&i| self.data[i].clone()).collect(),
            self.noise,
        )
    }

    /// Nodal interpolation onto another mesh.
    pub fn transfer(&self, from: &Mesh, to: &Mesh) -> Result<Self> {
        self.check_mesh(from)?;
        let data = exec::map_slice(&self.data, |d| to.interpolate_from(from, d))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let bcs = self
            .bcs
            .iter()
            .map(|bc| match bc {
                DirichletBc::Nodal(v) => {
                    let mut full = vec![0.0; from.n_nodes()];
                    for (&b, &x) in from.boundary_nodes().iter().zip(v) {
                        full[b] = x;
                    }
                    let on_to = to.interpolate_from(from, &full)?;
                    Ok(DirichletBc::Nodal(to.boundary_nodes().iter().map(|&b| on_to[b]).collect()))
                }
                other => Ok(other.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bcs, data, self.noise)
    }
}

/// Factorized Dirichlet problem for `−div(σ∇u) = 0`.
///
/// The system matrix has identity rows on the boundary and the interior
/// block of `K_σ`; it is shared by every boundary condition and by the
/// homogeneous solves of the linearization.
#[derive(Debug, Clone)]
pub struct ConductivityOperator {
    pub stiffness: SparseMatrix,
    pub system: SparseMatrix,
    lu: LuFactor,
}

impl ConductivityOperator {
    pub fn new(mesh: &Mesh, sigma: &Conductivity) -> Result<Self> {
        let stiffness = fem::assemble_stiffness(mesh, sigma)?;
        let zeros = vec![0.0; mesh.n_nodes()];
        let (system, _) = fem::apply_dirichlet(
            mesh,
            &stiffness,
            &zeros,
            &vec![0.0; mesh.boundary_nodes().len()],
            fem::DirichletMode::Symmetric,
        )?;
        let lu = LuFactor::factorize(&system)?;
        Ok(Self { stiffness, system, lu })
    }

    /// Solve with Dirichlet data `values` (ordered as `mesh.boundary_nodes()`).
    pub fn solve_dirichlet(&self, mesh: &Mesh, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != mesh.boundary_nodes().len() {
            return Err(Error::InvalidArgument(format!(
                "missing boundary values: got {} for {} boundary nodes",
                values.len(),
                mesh.boundary_nodes().len()
            )));
        }
        let mut g = vec![0.0; mesh.n_nodes()];
        for (&b, &v) in mesh.boundary_nodes().iter().zip(values) {
            g[b] = v;
        }
        let kg = self.stiffness.matvec(&g)?;
        let rhs: Vec<f64> = (0..mesh.n_nodes())
            .map(|i| if mesh.is_boundary(i) { g[i] } else { -kg[i] })
            .collect();
        lu::solve_with(&self.system, &self.lu, &rhs)
    }

    /// Solve `K_σ w = rhs` on interior nodes with `w = 0` on the boundary.
    /// Boundary entries of `rhs` are ignored.
    pub fn solve_homogeneous(&self, mesh: &Mesh, rhs: &[f64]) -> Result<Vec<f64>> {
        let b: Vec<f64> = rhs
            .iter()
            .enumerate()
            .map(|(i, &v)| if mesh.is_boundary(i) { 0.0 } else { v })
            .collect();
        lu::solve_with(&self.system, &self.lu, &b)
    }
}

pub fn solve_potential(mesh: &Mesh, sigma: &Conductivity, bc: &DirichletBc) -> Result<Vec<f64>> {
    ConductivityOperator::new(mesh, sigma)?.solve_dirichlet(mesh, &bc.boundary_values(mesh)?)
}

/// Per-element `σ̄ |∇u|²`.
pub fn power_density_elements(mesh: &Mesh, sigma: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let s = fem::element_mean(mesh, sigma)?;
    let g = fem::gradient(mesh, u)?;
    Ok(s.iter().zip(&g).map(|(s, g)| s * (g[0] * g[0] + g[1] * g[1])).collect())
}

/// Nodal power density `σ|∇u|²`.
pub fn power_density(mesh: &Mesh, sigma: &Conductivity, u: &[f64]) -> Result<Vec<f64>> {
    fem::project_p0_to_p1(mesh, &power_density_elements(mesh, sigma, u)?)
}

/// Potentials for each boundary condition, sharing one factorization.
pub fn solve_potentials(mesh: &Mesh, sigma: &Conductivity, bcs: &[DirichletBc]) -> Result<Vec<Vec<f64>>> {
    let op = ConductivityOperator::new(mesh, sigma)?;
    potentials_with(mesh, &op, bcs)
}

pub(crate) fn potentials_with(mesh: &Mesh, op: &ConductivityOperator, bcs: &[DirichletBc]) -> Result<Vec<Vec<f64>>> {
    exec::map_slice(bcs, |bc| op.solve_dirichlet(mesh, &bc.boundary_values(mesh)?))
        .into_iter()
        .collect()
}

/// Exact power densities for every boundary condition.
pub fn forward_map(mesh: &Mesh, sigma: &Conductivity, bcs: &[DirichletBc]) -> Result<MeasurementSet> {
    if bcs.is_empty() {
        return Err(Error::InvalidArgument("at least one measurement is required".into()));
    }
    let us = solve_potentials(mesh, sigma, bcs)?;
    let data = us
        .iter()
        .map(|u| power_density(mesh, sigma, u))
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(bcs.to_vec(), data, Noise::Exact)
}

/// Add independent `N(0, std²)` noise to every nodal value. Values are drawn
/// from ChaCha8 seeded with `seed`, measurement by measurement, node by node.
pub fn add_noise(data: &MeasurementSet, std: f64, seed: u64) -> Result<MeasurementSet> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!("noise std must be finite and >= 0, got {std}")));
    }
    let mut out = data.clone();
    out.noise = Noise::Gaussian { std, seed };
    if std == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for d in &mut out.data {
        for v in d.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Per-element `det(∇u₁, ∇u₂)`.
pub fn det_condition(mesh: &Mesh, u1: &[f64], u2: &[f64]) -> Result<Vec<f64>> {
    let g1 = fem::gradient(mesh, u1)?;
    let g2 = fem::gradient(mesh, u2)?;
    Ok(g1.iter().zip(&g2).map(|(a, b): (&Vector2, &Vector2)| a[0] * b[1] - a[1] * b[0]).collect())
}

/// The three boundary conditions `x`, `y` and `(x − y)/√2`.
pub fn standard_bcs() -> Vec<DirichletBc> {
    vec![
        DirichletBc::Linear { a: 1.0, b: 0.0 },
        DirichletBc::Linear { a: 0.0, b: 1.0 },
        DirichletBc::Diagonal,
    ]
}
