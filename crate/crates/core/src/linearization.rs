//! Derivative of the discrete power-density map, its adjoints and the coupled
//! Levenberg–Marquardt block system.
//!
//! With `q = |∇u|²` per element, `σ̄` the element mean of `σ`, `Aw(q)` the
//! centroid-weighted mass form and `C(g)` the convection form, the discrete
//! forward map is `E = M_L⁻¹ Σ_T (A/3) σ̄ q` and its derivative is
//!
//! ```text
//! E′τ = M_L⁻¹ (Aw(q) τ + 2 C(σ̄∇u)ᵀ y),   K_σ y = −C(∇u) τ,  y = 0 on ∂Ω.
//! ```
//!
//! The adjoint is taken with respect to the mass inner product, so
//! `⟨E′τ, z⟩_M = ⟨τ, E′*z⟩_M` holds up to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::fem::{self, DirichletBc, FemSpace, Vector2};
use crate::forward::{self, Conductivity, ConductivityOperator, MeasurementSet};
use crate::mesh::Mesh;
use crate::sparse::{lu, BlockAssembler, BlockLayout, BlockSystem, Contribution, SparseMatrix};

/// Which Hilbert-space adjoint the step uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
pub enum AdjointVariant {
    L2,
    H1 { beta: f64 },
    H2 { beta: f64 },
}

impl AdjointVariant {
    pub fn new(tag: &str, beta: f64) -> Result<Self> {
        let v = match tag.to_ascii_lowercase().as_str() {
            "l2" => Self::L2,
            "h1" => Self::H1 { beta },
            "h2" => Self::H2 { beta },
            other => {
                return Err(Error::Parse(format!(
                    "unknown adjoint variant `{other}` (expected l2, h1 or h2)"
                )))
            }
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        match self.beta() {
            Some(b) if !(b > 0.0 && b.is_finite()) => Err(Error::InvalidArgument(format!(
                "beta must be positive for the {} adjoint, got {b}",
                self.tag()
            ))),
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::L2 => "l2",
            Self::H1 { .. } => "h1",
            Self::H2 { .. } => "h2",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            Self::L2 => None,
            Self::H1 { beta } | Self::H2 { beta } => Some(beta),
        }
    }
}

/// Sparse forms of one measurement at the current conductivity.
#[derive(Debug, Clone)]
pub struct MeasurementOperators {
    /// `Aw(|∇u|²)`.
    pub weighted_mass: SparseMatrix,
    /// `C(∇u)`.
    pub conv: SparseMatrix,
    /// `C(σ̄∇u)`.
    pub conv_sigma: SparseMatrix,
}

/// Everything the derivative needs at a fixed conductivity. Rebuild it
/// whenever `σ` changes.
#[derive(Debug, Clone)]
pub struct LinearizationContext<'a> {
    space: &'a FemSpace,
    sigma: Conductivity,
    bcs: Vec<DirichletBc>,
    op: ConductivityOperator,
    potentials: Vec<Vec<f64>>,
    grads: Vec<Vec<Vector2>>,
    grad_sq: Vec<Vec<f64>>,
    ops: Vec<MeasurementOperators>,
    forward: Vec<Vec<f64>>,
}

impl<'a> LinearizationContext<'a> {
    pub fn new(space: &'a FemSpace, sigma: Conductivity, bcs: &[DirichletBc]) -> Result<Self> {
        if bcs.is_empty() {
            return Err(Error::InvalidArgument("at least one measurement is required".into()));
        }
        let mesh = &space.mesh;
        let op = ConductivityOperator::new(mesh, &sigma)?;
        let potentials = forward::potentials_with(mesh, &op, bcs)?;
        let sigma_elem = fem::element_mean(mesh, &sigma)?;
        let per: Vec<Result<_>> = exec::map_slice(&potentials, |u| {
            let g = fem::gradient(mesh, u)?;
            let q: Vec<f64> = g.iter().map(|g| g[0] * g[0] + g[1] * g[1]).collect();
            let sg: Vec<Vector2> = g.iter().zip(&sigma_elem).map(|(g, s)| [s * g[0], s * g[1]]).collect();
            let e: Vec<f64> = q.iter().zip(&sigma_elem).map(|(q, s)| s * q).collect();
            let ops = MeasurementOperators {
                weighted_mass: fem::assemble_centroid_mass(mesh, &q)?,
                conv: fem::assemble_convection(mesh, &g)?,
                conv_sigma: fem::assemble_convection(mesh, &sg)?,
            };
            Ok((g, q, ops, fem::project_p0_to_p1(mesh, &e)?))
        });
        let mut grads = Vec::new();
        let mut grad_sq = Vec::new();
        let mut ops = Vec::new();
        let mut fwd = Vec::new();
        for r in per {
            let (g, q, o, e) = r?;
            grads.push(g);
            grad_sq.push(q);
            ops.push(o);
            fwd.push(e);
        }
        Ok(Self {
            space,
            sigma,
            bcs: bcs.to_vec(),
            op,
            potentials,
            grads,
            grad_sq,
            ops,
            forward: fwd,
        })
    }

    pub fn space(&self) -> &'a FemSpace {
        self.space
    }

    pub fn mesh(&self) -> &'a Mesh {
        &self.space.mesh
    }

    pub fn sigma(&self) -> &Conductivity {
        &self.sigma
    }

    pub fn bcs(&self) -> &[DirichletBc] {
        &self.bcs
    }

    pub fn m(&self) -> usize {
        self.potentials.len()
    }

    pub fn potentials(&self) -> &[Vec<f64>] {
        &self.potentials
    }

    pub fn gradients(&self, j: usize) -> &[Vector2] {
        &self.grads[j]
    }

    pub fn grad_sq(&self, j: usize) -> &[f64] {
        &self.grad_sq[j]
    }

    pub fn operators(&self, j: usize) -> &MeasurementOperators {
        &self.ops[j]
    }

    pub fn conductivity_operator(&self) -> &ConductivityOperator {
        &self.op
    }

    /// `E_j(σ)` for every measurement.
    pub fn forward_data(&self) -> &[Vec<f64>] {
        &self.forward
    }

    /// `E^δ − E(σ)`.
    pub fn residual(&self, data: &MeasurementSet) -> Result<Vec<Vec<f64>>> {
        if data.m() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                got: data.m(),
            });
        }
        data.check_mesh(self.mesh())?;
        Ok(data
            .data
            .iter()
            .zip(&self.forward)
            .map(|(d, e)| d.iter().zip(e).map(|(a, b)| a - b).collect())
            .collect())
    }

    fn check_field(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.mesh().n_nodes() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.mesh().n_nodes(),
                got: v.len(),
            })
        }
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j < self.m() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("measurement {j} out of range for {}", self.m())))
        }
    }

    /// `u′(σ)τ` for measurement `j`.
    pub fn linearized_potential(&self, tau: &[f64], j: usize) -> Result<Vec<f64>> {
        self.check_field(tau)?;
        self.check_index(j)?;
        let mut rhs = self.ops[j].conv.matvec(tau)?;
        rhs.iter_mut().for_each(|v| *v = -*v);
        self.op.solve_homogeneous(self.mesh(), &rhs)
    }

    /// `Aw(q) τ + 2 C(σ̄∇u)ᵀ u′τ`, before division by the lumped mass.
    fn derivative_load(&self, tau: &[f64], j: usize) -> Result<Vec<f64>> {
        let y = self.linearized_potential(tau, j)?;
        let a = self.ops[j].weighted_mass.matvec(tau)?;
        let b = self.ops[j].conv_sigma.matvec_transpose(&y)?;
        Ok(a.iter().zip(&b).map(|(a, b)| a + 2.0 * b).collect())
    }

    /// `E_j′(σ)τ`.
    pub fn apply_derivative_one(&self, tau: &[f64], j: usize) -> Result<Vec<f64>> {
        let load = self.derivative_load(tau, j)?;
        Ok(load.iter().zip(&self.space.lumped).map(|(l, m)| l / m).collect())
    }

    /// `E′(σ)τ`, one field per measurement.
    pub fn apply_derivative(&self, tau: &[f64]) -> Result<Vec<Vec<f64>>> {
        exec::map_range(self.m(), |j| self.apply_derivative_one(tau, j))
            .into_iter()
            .collect()
    }

    /// `V_j z`: `K_σ V z = −C(σ̄∇u_j) z`, `V z = 0` on ∂Ω.
    pub fn apply_v(&self, z: &[f64], j: usize) -> Result<Vec<f64>> {
        self.check_field(z)?;
        self.check_index(j)?;
        let mut rhs = self.ops[j].conv_sigma.matvec(z)?;
        rhs.iter_mut().for_each(|v| *v = -*v);
        self.op.solve_homogeneous(self.mesh(), &rhs)
    }

    /// `Aw(q) w + 2 C(∇u)ᵀ V w`: the transpose of the derivative load.
    fn adjoint_load(&self, w: &[f64], j: usize) -> Result<Vec<f64>> {
        let v = self.apply_v(w, j)?;
        let a = self.ops[j].weighted_mass.matvec(w)?;
        let b = self.ops[j].conv.matvec_transpose(&v)?;
        Ok(a.iter().zip(&b).map(|(a, b)| a + 2.0 * b).collect())
    }

    /// Mass-adjoint of the derivative applied to one field per measurement:
    /// `M⁻¹ Σ_j [Aw(q_j) w_j + 2 C(∇u_j)ᵀ V_j w_j]` with `w_j = M_L⁻¹ M z_j`.
    pub fn apply_adjoint_pre_embedding(&self, z: &[Vec<f64>]) -> Result<Vec<f64>> {
        if z.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                got: z.len(),
            });
        }
        let loads = exec::map_range(self.m(), |j| {
            self.check_field(&z[j])?;
            let mz = self.space.mass.matvec(&z[j])?;
            let w: Vec<f64> = mz.iter().zip(&self.space.lumped).map(|(a, m)| a / m).collect();
            self.adjoint_load(&w, j)
        });
        let mut total = vec![0.0; self.mesh().n_nodes()];
        for l in loads {
            for (t, v) in total.iter_mut().zip(l?) {
                *t += v;
            }
        }
        self.space.solve_mass(&total)
    }

    /// The per-measurement coupling matrices of the block system.
    fn lm_couplings(&self, j: usize, n_lumped: &SparseMatrix) -> Result<LmCouplings> {
        let o = &self.ops[j];
        let g_prime = o.conv_sigma.transpose();
        let n_aw = n_lumped.matmul(&o.weighted_mass)?;
        let n_gp = n_lumped.matmul(&g_prime)?;
        Ok(LmCouplings {
            w: o.weighted_mass.matmul(&n_aw)?,
            g: o.weighted_mass.matmul(&n_gp)?,
            s: o.conv_sigma.matmul(&n_aw)?,
            d: o.conv_sigma.matmul(&n_gp)?,
            b: o.conv.transpose(),
        })
    }
}

struct LmCouplings {
    w: SparseMatrix,
    g: SparseMatrix,
    s: SparseMatrix,
    d: SparseMatrix,
    b: SparseMatrix,
}

/// The embedding adjoint `i*`: identity for L², `(M + β²K)⁻¹ M` for H¹, and
/// the mixed split `M w + β² K v = M y`, `K w − M v = 0` for H².
pub fn apply_i_star(space: &FemSpace, variant: AdjointVariant, y: &[f64]) -> Result<Vec<f64>> {
    variant.validate()?;
    let n = space.n_nodes();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let my = space.mass.matvec(y)?;
    match variant {
        AdjointVariant::L2 => Ok(y.to_vec()),
        AdjointVariant::H1 { beta } => {
            let a = SparseMatrix::linear_combination(&[(1.0, &space.mass), (beta * beta, &space.laplace)])?;
            lu::solve(&a, &my)
        }
        AdjointVariant::H2 { beta } => {
            let layout = BlockLayout::new(["w", "v"], n)?;
            let mut asm = BlockAssembler::new(layout);
            asm.add(Contribution::new("w", "w", 1.0, &space.mass))?
                .add(Contribution::new("w", "v", beta * beta, &space.laplace))?
                .add(Contribution::new("v", "w", 1.0, &space.laplace))?
                .add(Contribution::new("v", "v", -1.0, &space.mass))?
                .add_rhs("w", 1.0, &my)?;
            let sol = asm.finish()?.solve()?;
            Ok(sol.block("w")?.to_vec())
        }
    }
}

/// Names of the per-measurement blocks.
pub fn y_block_names(j: usize) -> [String; 3] {
    [format!("y1_{j}"), format!("y2_{j}"), format!("y3_{j}")]
}

/// Assemble the coupled system whose `tau` block is the LM step
/// `(E′ᵀ M E′ + α G) τ = E′ᵀ M r`, where `G` is the Gram matrix of the
/// chosen adjoint space.
pub fn assemble_lm_blocks(
    ctx: &LinearizationContext<'_>,
    variant: AdjointVariant,
    alpha: f64,
    residual: &[Vec<f64>],
) -> Result<BlockSystem> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    variant.validate()?;
    let space = ctx.space();
    let mesh = ctx.mesh();
    let n = mesh.n_nodes();
    let m = ctx.m();

    let adj = ctx.apply_adjoint_pre_embedding(residual)?;
    let g = apply_i_star(space, variant, &adj)?;
    let rhs_tau = space.mass.matvec(&g)?;

    let inv_lumped: Vec<f64> = space.lumped.iter().map(|v| 1.0 / v).collect();
    let n_lumped = space
        .mass
        .scale_rows(&inv_lumped)?
        .matmul(&SparseMatrix::diagonal(&inv_lumped))?;
    let couplings: Vec<LmCouplings> = exec::map_range(m, |j| ctx.lm_couplings(j, &n_lumped))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut names: Vec<String> = vec!["tau".into(), "z3".into()];
    if matches!(variant, AdjointVariant::H2 { .. }) {
        names.push("z2".into());
    }
    names.push("z1".into());
    for j in 0..m {
        names.extend(y_block_names(j));
    }
    let mut asm = BlockAssembler::new(BlockLayout::new(names, n)?);
    let identity = SparseMatrix::identity(n);
    let mass = &space.mass;
    let lap = &space.laplace;
    let k_sigma = &ctx.conductivity_operator().stiffness;

    asm.add(Contribution::new("tau", "z3", 1.0, mass))?
        .add(Contribution::new("tau", "tau", alpha, mass))?
        .add_rhs("tau", 1.0, &rhs_tau)?;
    match variant {
        AdjointVariant::L2 => {
            asm.add(Contribution::new("z3", "z3", 1.0, &identity))?
                .add(Contribution::new("z3", "z1", -1.0, &identity))?;
        }
        AdjointVariant::H1 { beta } => {
            asm.add(Contribution::new("z3", "z3", 1.0, mass))?
                .add(Contribution::new("z3", "z3", beta * beta, lap))?
                .add(Contribution::new("z3", "z1", -1.0, mass))?;
        }
        AdjointVariant::H2 { beta } => {
            asm.add(Contribution::new("z3", "z2", -beta * beta, lap))?
                .add(Contribution::new("z3", "z3", 1.0, mass))?
                .add(Contribution::new("z3", "z1", -1.0, mass))?
                .add(Contribution::new("z2", "z3", 1.0, lap))?
                .add(Contribution::new("z2", "z2", 1.0, mass))?;
        }
    }
    asm.add(Contribution::new("z1", "z1", 1.0, mass))?;
    let boundary = mesh.boundary_nodes();
    let zeros = vec![0.0; boundary.len()];
    for (j, c) in couplings.iter().enumerate() {
        let [y1, y2, y3] = y_block_names(j);
        asm.add(Contribution::new("z1", "tau", -1.0, &c.w))?
            .add(Contribution::new("z1", &y1, -2.0, &c.g))?
            .add(Contribution::new("z1", &y2, -2.0, &c.b))?
            .add(Contribution::new("z1", &y3, -4.0, &c.b))?
            .add(Contribution::new(&y1, &y1, 1.0, k_sigma))?
            .add(Contribution::new(&y1, "tau", 1.0, &ctx.operators(j).conv))?
            .add(Contribution::new(&y2, &y2, 1.0, k_sigma))?
            .add(Contribution::new(&y2, "tau", 1.0, &c.s))?
            .add(Contribution::new(&y3, &y3, 1.0, k_sigma))?
            .add(Contribution::new(&y3, &y1, 1.0, &c.d))?;
        for y in [&y1, &y2, &y3] {
            asm.fix_rows(y, boundary, &zeros)?;
        }
    }
    asm.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;

    fn space(r: usize) -> FemSpace {
        FemSpace::new(build_disk_mesh(r).unwrap()).unwrap()
    }

    fn smooth_sigma(mesh: &Mesh) -> Conductivity {
        Conductivity::new(mesh, mesh.interpolate(|x, y| 1.5 + 0.5 * (2.0 * x + y).sin()), 1e-12).unwrap()
    }

    fn x_bc() -> DirichletBc {
        DirichletBc::Linear { a: 1.0, b: 0.0 }
    }

    #[test]
    fn linearized_potential_of_kernel_direction() {
        // σ ≡ 1, f = τ = (x − y)/√2: u′τ = (1 − r²)/4.
        let mut errs = Vec::new();
        for r in [8, 16, 32] {
            let sp = space(r);
            let s = Conductivity::constant(&sp.mesh, 1.0).unwrap();
            let ctx = LinearizationContext::new(&sp, s, &[DirichletBc::Diagonal]).unwrap();
            let tau = sp.mesh.interpolate(|x, y| (x - y) / 2f64.sqrt());
            let y = ctx.linearized_potential(&tau, 0).unwrap();
            let exact = sp.mesh.interpolate(|x, y| 0.25 * (1.0 - x * x - y * y));
            let d: Vec<f64> = y.iter().zip(&exact).map(|(a, b)| a - b).collect();
            errs.push(sp.norm(&d));
        }
        assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn constant_direction() {
        let sp = space(6);
        let s = Conductivity::constant(&sp.mesh, 1.0).unwrap();
        let ctx = LinearizationContext::new(&sp, s, &[x_bc()]).unwrap();
        let tau = vec![2.5; sp.n_nodes()];
        let y = ctx.linearized_potential(&tau, 0).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        let d = ctx.apply_derivative(&tau).unwrap();
        assert!(d[0].iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn derivative_is_linear() {
        let sp = space(5);
        let ctx = LinearizationContext::new(&sp, smooth_sigma(&sp.mesh), &[x_bc(), DirichletBc::Diagonal]).unwrap();
        let t1 = sp.mesh.interpolate(|x, y| x * y + 0.3);
        let t2 = sp.mesh.interpolate(|x, y| (3.0 * x).cos() - y);
        let (a, b) = (0.7, -1.9);
        let comb: Vec<f64> = t1.iter().zip(&t2).map(|(p, q)| a * p + b * q).collect();
        let lhs = ctx.apply_derivative(&comb).unwrap();
        let r1 = ctx.apply_derivative(&t1).unwrap();
        let r2 = ctx.apply_derivative(&t2).unwrap();
        for j in 0..2 {
            let scale = lhs[j].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..sp.n_nodes() {
                assert!((lhs[j][i] - (a * r1[j][i] + b * r2[j][i])).abs() <= 1e-12 * scale);
            }
        }
        let y1 = ctx.linearized_potential(&comb, 1).unwrap();
        let ya = ctx.linearized_potential(&t1, 1).unwrap();
        let yb = ctx.linearized_potential(&t2, 1).unwrap();
        let scale = y1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..sp.n_nodes() {
            assert!((y1[i] - (a * ya[i] + b * yb[i])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn v_operator_trivial_cases() {
        let sp = space(5);
        let ctx = LinearizationContext::new(&sp, Conductivity::constant(&sp.mesh, 1.0).unwrap(), &[x_bc()]).unwrap();
        assert!(ctx.apply_v(&vec![0.0; sp.n_nodes()], 0).unwrap().iter().all(|&v| v == 0.0));
        let v1 = ctx.apply_v(&vec![1.0; sp.n_nodes()], 0).unwrap();
        assert!(v1.iter().all(|v| v.abs() < 1e-12));
    }

    /// Dense per-element assembly of `K_σ` and `C(σ̄∇u)` written out
    /// independently of the sparse forms.
    #[test]
    fn v_operator_matches_dense_oracle() {
        let sp = space(2);
        let mesh = &sp.mesh;
        let sigma = smooth_sigma(mesh);
        let ctx = LinearizationContext::new(&sp, sigma.clone(), &[DirichletBc::Diagonal]).unwrap();
        let n = mesh.n_nodes();
        let u = &ctx.potentials()[0];
        let mut k = vec![vec![0.0; n]; n];
        let mut c = vec![vec![0.0; n]; n];
        for tri in mesh.triangles() {
            let p: Vec<[f64; 2]> = tri.iter().map(|&i| mesh.nodes()[i]).collect();
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            let area = 0.5 * det;
            let grads: Vec<[f64; 2]> = (0..3)
                .map(|a| {
                    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                    [(p[b][1] - p[c][1]) / det, (p[c][0] - p[b][0]) / det]
                })
                .collect();
            let sbar = tri.iter().map(|&i| sigma[i]).sum::<f64>() / 3.0;
            let gu = (0..3).fold([0.0, 0.0], |acc, a| {
                [acc[0] + u[tri[a]] * grads[a][0], acc[1] + u[tri[a]] * grads[a][1]]
            });
            for a in 0..3 {
                for b in 0..3 {
                    k[tri[a]][tri[b]] += sbar * area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                    c[tri[a]][tri[b]] += area / 3.0 * sbar * (gu[0] * grads[a][0] + gu[1] * grads[a][1]);
                }
            }
        }
        let z: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let mut rhs: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| c[i][j] * z[j]).sum::<f64>()).collect();
        for &b in mesh.boundary_nodes() {
            k[b] = vec![0.0; n];
            k[b][b] = 1.0;
            rhs[b] = 0.0;
        }
        // Gaussian elimination with partial pivoting.
        let mut a = k;
        for col in 0..n {
            let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, p);
            rhs.swap(col, p);
            for i in col + 1..n {
                let f = a[i][col] / a[col][col];
                for j in col..n {
                    a[i][j] -= f * a[col][j];
                }
                rhs[i] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (rhs[i] - (i + 1..n).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
        }
        let v = ctx.apply_v(&z, 0).unwrap();
        for (p, q) in v.iter().zip(&x) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_is_additive_and_zero_on_zero() {
        let sp = space(3);
        let bcs = [x_bc(), DirichletBc::Linear { a: 0.0, b: 1.0 }];
        let ctx = LinearizationContext::new(&sp, smooth_sigma(&sp.mesh), &bcs).unwrap();
        let n = sp.n_nodes();
        let z0 = sp.mesh.interpolate(|x, y| x * x - y);
        let z1 = sp.mesh.interpolate(|x, y| (x + y).sin());
        let zero = vec![0.0; n];
        let both = ctx.apply_adjoint_pre_embedding(&[z0.clone(), z1.clone()]).unwrap();
        let a = ctx.apply_adjoint_pre_embedding(&[z0, zero.clone()]).unwrap();
        let b = ctx.apply_adjoint_pre_embedding(&[zero.clone(), z1]).unwrap();
        let scale = both.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            assert!((both[i] - a[i] - b[i]).abs() <= 1e-12 * scale);
        }
        let z = ctx.apply_adjoint_pre_embedding(&[zero.clone(), zero]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn i_star_fixes_constants() {
        let sp = space(6);
        let c = vec![3.25; sp.n_nodes()];
        for v in [AdjointVariant::L2, AdjointVariant::H1 { beta: 0.3 }, AdjointVariant::H2 { beta: 0.3 }] {
            let w = apply_i_star(&sp, v, &c).unwrap();
            assert!(w.iter().all(|x| (x - 3.25).abs() < 1e-10), "{v:?}");
        }
    }

    #[test]
    fn i_star_small_beta_is_identity() {
        let sp = space(8);
        let y = sp.mesh.interpolate(|x, y| (2.0 * x).sin() * y + 1.0);
        for v in [AdjointVariant::H1 { beta: 1e-6 }, AdjointVariant::H2 { beta: 1e-6 }] {
            let w = apply_i_star(&sp, v, &y).unwrap();
            let d: Vec<f64> = w.iter().zip(&y).map(|(a, b)| a - b).collect();
            assert!(sp.norm(&d) / sp.norm(&y) < 1e-3);
        }
    }

    #[test]
    fn h1_embedding_is_a_contraction() {
        let sp = space(10);
        let y = sp.mesh.interpolate(|x, y| (6.0 * y.atan2(x)).cos());
        let w = apply_i_star(&sp, AdjointVariant::H1 { beta: 0.2 }, &y).unwrap();
        assert!(sp.norm(&w) <= sp.norm(&y));
        assert!(sp.norm(&w) < 0.9 * sp.norm(&y));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!(AdjointVariant::new("H1", 1e-3).unwrap(), AdjointVariant::H1 { beta: 1e-3 });
        assert!(AdjointVariant::new("h2", 0.0).is_err());
        assert!(AdjointVariant::new("h3", 1.0).is_err());
        assert_eq!(AdjointVariant::new("l2", 0.0).unwrap().tag(), "l2");
    }

    #[test]
    fn zero_residual_gives_zero_step() {
        let sp = space(3);
        let ctx = LinearizationContext::new(&sp, smooth_sigma(&sp.mesh), &[x_bc()]).unwrap();
        let r = vec![vec![0.0; sp.n_nodes()]];
        for v in [AdjointVariant::L2, AdjointVariant::H1 { beta: 1e-3 }, AdjointVariant::H2 { beta: 1e-3 }] {
            let sol = assemble_lm_blocks(&ctx, v, 0.5, &r).unwrap().solve().unwrap();
            assert!(sol.values.iter().all(|&x| x == 0.0));
        }
        assert!(assemble_lm_blocks(&ctx, AdjointVariant::L2, -1.0, &r).is_err());
    }

    #[test]
    fn large_alpha_bounds_the_step() {
        let sp = space(3);
        let ctx = LinearizationContext::new(&sp, smooth_sigma(&sp.mesh), &[x_bc()]).unwrap();
        let r = vec![sp.mesh.interpolate(|x, y| 1.0 + x * y)];
        let alpha = 1e6;
        let sys = assemble_lm_blocks(&ctx, AdjointVariant::L2, alpha, &r).unwrap();
        let tau = sys.solve().unwrap().block("tau").unwrap().to_vec();
        let g = ctx.apply_adjoint_pre_embedding(&r).unwrap();
        assert!(sp.norm(&tau) <= sp.norm(&g) / alpha);
    }

    #[test]
    fn block_layout_depends_on_variant() {
        let sp = space(2);
        let ctx = LinearizationContext::new(&sp, smooth_sigma(&sp.mesh), &[x_bc(), DirichletBc::Diagonal]).unwrap();
        let r = vec![vec![0.0; sp.n_nodes()]; 2];
        let l2 = assemble_lm_blocks(&ctx, AdjointVariant::L2, 1.0, &r).unwrap();
        let h2 = assemble_lm_blocks(&ctx, AdjointVariant::H2 { beta: 0.1 }, 1.0, &r).unwrap();
        assert_eq!(l2.layout.n_blocks(), 3 + 6);
        assert_eq!(h2.layout.n_blocks(), 4 + 6);
        assert!(h2.layout.index("z2").is_ok() && l2.layout.index("z2").is_err());
    }
}
