//! P1 finite-element forms on a [`Mesh`].
//!
//! Conventions used throughout:
//! * nodal (P1) fields are plain `[f64]` slices of length `n_nodes`;
//! * element (P0) fields have length `n_triangles`, vector-valued ones are
//!   `[[f64; 2]]`;
//! * a nodal coefficient inside a stiffness form is replaced by the mean of
//!   its three vertex values;
//! * products `φᵢ · (P1) · (P0)` are integrated with the centroid rule, pure
//!   `φᵢ φⱼ` products exactly.

use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::exec;
use crate::mesh::Mesh;
use crate::sparse::{lu, LuFactor, SparseMatrix, Triplet};

pub type Vector2 = [f64; 2];

/// Nodal P1 field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField(Vec<f64>);

impl ScalarField {
    /// Validated field: one finite value per mesh node.
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        check_len(mesh.n_nodes(), values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {i}")));
        }
        Ok(Self(values))
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        Self(vec![c; mesh.n_nodes()])
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        Self(mesh.interpolate(f))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<ScalarField> for Vec<f64> {
    fn from(f: ScalarField) -> Self {
        f.0
    }
}

/// Per-triangle scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField(pub Vec<f64>);

/// Per-triangle 2-vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorElementField(pub Vec<Vector2>);

impl Deref for ElementField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for VectorElementField {
    type Target = [Vector2];
    fn deref(&self) -> &[Vector2] {
        &self.0
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Dirichlet boundary data.
#[derive(Debug, Clone, PartialEq)]
pub enum DirichletBc {
    /// `f(x, y) = a x + b y`.
    Linear { a: f64, b: f64 },
    /// `f(x, y) = (x − y) / √2`.
    Diagonal,
    /// Explicit values, one per entry of `Mesh::boundary_nodes`.
    Nodal(Vec<f64>),
}

impl DirichletBc {
    /// Parse a descriptor: `x`, `y`, `linear:a,b` or `diagonal`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "x" => return Ok(Self::Linear { a: 1.0, b: 0.0 }),
            "y" => return Ok(Self::Linear { a: 0.0, b: 1.0 }),
            "diagonal" => return Ok(Self::Diagonal),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("linear:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if let [a, b] = parts[..] {
                let p = |v: &str| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad coefficient `{v}` in `{s}`")))
                };
                return Ok(Self::Linear { a: p(a)?, b: p(b)? });
            }
        }
        Err(Error::Parse(format!(
            "unknown boundary condition `{s}` (expected x, y, linear:a,b or diagonal)"
        )))
    }

    pub fn descriptor(&self) -> String {
        match self {
            Self::Linear { a, b } => format!("linear:{a},{b}"),
            Self::Diagonal => "diagonal".into(),
            Self::Nodal(v) => format!("nodal[{}]", v.len()),
        }
    }

    /// Closed-form boundary function, when there is one.
    pub fn function(&self) -> Option<impl Fn(f64, f64) -> f64 + '_> {
        match self {
            Self::Nodal(_) => None,
            _ => Some(move |x: f64, y: f64| match self {
                Self::Linear { a, b } => a * x + b * y,
                Self::Diagonal => FRAC_1_SQRT_2 * (x - y),
                Self::Nodal(_) => unreachable!(),
            }),
        }
    }

    /// Values on `mesh.boundary_nodes()`, in that order.
    pub fn boundary_values(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        match self {
            Self::Nodal(v) => {
                check_len(mesh.boundary_nodes().len(), v.len())?;
                Ok(v.clone())
            }
            _ => {
                let f = self.function().unwrap();
                Ok(mesh
                    .boundary_nodes()
                    .iter()
                    .map(|&i| {
                        let p = mesh.nodes()[i];
                        f(p[0], p[1])
                    })
                    .collect())
            }
        }
    }
}

fn assemble(mesh: &Mesh, local: impl Fn(usize) -> [[f64; 3]; 3] + Sync + Send) -> Result<SparseMatrix> {
    let triplets: Vec<Triplet> = exec::flat_map_range(mesh.n_triangles(), |t| {
        let tri = mesh.triangles()[t];
        let k = local(t);
        let mut out = Vec::with_capacity(9);
        for a in 0..3 {
            for b in 0..3 {
                out.push((tri[a], tri[b], k[a][b]));
            }
        }
        out
    });
    let n = mesh.n_nodes();
    SparseMatrix::from_triplets(n, n, &triplets)
}

fn dot(a: Vector2, b: Vector2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Vertex average of a nodal field on each triangle.
pub fn element_mean(mesh: &Mesh, nodal: &[f64]) -> Result<Vec<f64>> {
    check_len(mesh.n_nodes(), nodal.len())?;
    Ok(mesh
        .triangles()
        .iter()
        .map(|tri| (nodal[tri[0]] + nodal[tri[1]] + nodal[tri[2]]) / 3.0)
        .collect())
}

/// `∫ c ∇φⱼ·∇φᵢ` with a nodal coefficient (element mean).
pub fn assemble_stiffness(mesh: &Mesh, coeff: &[f64]) -> Result<SparseMatrix> {
    let c = element_mean(mesh, coeff)?;
    assemble_stiffness_p0(mesh, &c)
}

/// Stiffness form with a per-element coefficient.
pub fn assemble_stiffness_p0(mesh: &Mesh, coeff: &[f64]) -> Result<SparseMatrix> {
    check_len(mesh.n_triangles(), coeff.len())?;
    assemble(mesh, |t| {
        let g = mesh.grads(t);
        let s = coeff[t] * mesh.area(t);
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                k[a][b] = s * dot(g[a], g[b]);
            }
        }
        k
    })
}

/// Consistent P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh) -> Result<SparseMatrix> {
    assemble(mesh, |t| {
        let s = mesh.area(t) / 12.0;
        let mut m = [[s; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            row[a] = 2.0 * s;
        }
        m
    })
}

/// Row sums of the mass matrix, `mᵢ = ∫ φᵢ`.
pub fn lumped_mass(mesh: &Mesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for &i in tri {
            m[i] += mesh.area(t) / 3.0;
        }
    }
    m
}

/// `∫ w φⱼ φᵢ` for a P0 weight, centroid rule (`A w / 9` per local pair).
pub fn assemble_centroid_mass(mesh: &Mesh, weight: &[f64]) -> Result<SparseMatrix> {
    check_len(mesh.n_triangles(), weight.len())?;
    assemble(mesh, |t| [[mesh.area(t) * weight[t] / 9.0; 3]; 3])
}

/// `Cᵢⱼ = ∫ φⱼ (g · ∇φᵢ)` for a P0 vector field `g`.
///
/// For nodal `τ`, `(C τ)ᵢ = ∫ τ g·∇φᵢ`, the weak form of `−div(τ g)` tested
/// against functions vanishing on the boundary.
pub fn assemble_convection(mesh: &Mesh, g: &[Vector2]) -> Result<SparseMatrix> {
    check_len(mesh.n_triangles(), g.len())?;
    assemble(mesh, |t| {
        let gr = mesh.grads(t);
        let s = mesh.area(t) / 3.0;
        let mut c = [[0.0; 3]; 3];
        for a in 0..3 {
            let v = s * dot(g[t], gr[a]);
            c[a] = [v; 3];
        }
        c
    })
}

/// Per-triangle gradient of the P1 interpolant.
pub fn gradient(mesh: &Mesh, u: &[f64]) -> Result<Vec<Vector2>> {
    check_len(mesh.n_nodes(), u.len())?;
    Ok(mesh
        .triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let g = mesh.grads(t);
            let mut out = [0.0; 2];
            for a in 0..3 {
                out[0] += u[tri[a]] * g[a][0];
                out[1] += u[tri[a]] * g[a][1];
            }
            out
        })
        .collect())
}

/// Lumped-mass projection of a P0 field: area-weighted average of the
/// incident triangle values.
pub fn project_p0_to_p1(mesh: &Mesh, e: &[f64]) -> Result<Vec<f64>> {
    check_len(mesh.n_triangles(), e.len())?;
    let mut num = vec![0.0; mesh.n_nodes()];
    let mut den = vec![0.0; mesh.n_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        for &i in tri {
            num[i] += a * e[t];
            den[i] += a;
        }
    }
    Ok(num.iter().zip(&den).map(|(n, d)| n / d).collect())
}

/// How Dirichlet rows are imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletMode {
    /// Identity rows plus column elimination into the right-hand side;
    /// keeps symmetric systems symmetric.
    Symmetric,
    /// Identity rows only.
    RowReplace,
}

/// Impose `u = g` on the boundary nodes. `values` follows
/// `mesh.boundary_nodes()`.
pub fn apply_dirichlet(
    mesh: &Mesh,
    a: &SparseMatrix,
    rhs: &[f64],
    values: &[f64],
    mode: DirichletMode,
) -> Result<(SparseMatrix, Vec<f64>)> {
    let n = mesh.n_nodes();
    check_len(n, a.n_rows())?;
    check_len(n, rhs.len())?;
    if values.len() != mesh.boundary_nodes().len() {
        return Err(Error::InvalidArgument(format!(
            "missing boundary values: got {} for {} boundary nodes",
            values.len(),
            mesh.boundary_nodes().len()
        )));
    }
    let mut g = vec![0.0; n];
    for (&b, &v) in mesh.boundary_nodes().iter().zip(values) {
        g[b] = v;
    }
    let fixed = mesh.boundary_mask();
    let mut b = rhs.to_vec();
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..n {
        if fixed[i] {
            triplets.push((i, i, 1.0));
            b[i] = g[i];
            continue;
        }
        for (j, v) in a.row(i) {
            if mode == DirichletMode::Symmetric && fixed[j] {
                b[i] -= v * g[j];
            } else {
                triplets.push((i, j, v));
            }
        }
    }
    Ok((SparseMatrix::from_triplets(n, n, &triplets)?, b))
}

/// Cached mass forms of one mesh.
#[derive(Debug, Clone)]
pub struct FemSpace {
    pub mesh: Mesh,
    pub mass: SparseMatrix,
    pub lumped: Vec<f64>,
    /// Unit-coefficient stiffness (the weak negative Laplacian).
    pub laplace: SparseMatrix,
    mass_lu: LuFactor,
}

impl FemSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let mass = assemble_mass(&mesh)?;
        let lumped = lumped_mass(&mesh);
        let laplace = assemble_stiffness_p0(&mesh, &vec![1.0; mesh.n_triangles()])?;
        let mass_lu = LuFactor::factorize(&mass)?;
        Ok(Self {
            mesh,
            mass,
            lumped,
            laplace,
            mass_lu,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// `⟨a, b⟩_M = aᵀ M b`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mb = self.mass.matvec(b).expect("length checked by caller");
        a.iter().zip(&mb).map(|(x, y)| x * y).sum()
    }

    /// `M⁻¹ b`.
    pub fn solve_mass(&self, b: &[f64]) -> Result<Vec<f64>> {
        lu::solve_with(&self.mass, &self.mass_lu, b)
    }

    /// L²(Ω) norm of a P1 field.
    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}
