//! Dense oracles and property checks, runnable as one deterministic suite.


use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{DirichletBc, FemSpace};
use crate::forward::{self, Conductivity, DEFAULT_SIGMA_MIN};
use crate::linearization::{assemble_lm_blocks, AdjointVariant, LinearizationContext};
use crate::mesh::{build_disk_mesh, Mesh};
use crate::phantom::{evaluate_phantom, radial_two_layer_oracle, PhantomSpec};

/// Largest mesh on which dense operators may be formed.
pub const DENSE_NODE_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianSource {
    Columnwise,
    FiniteDifference,
}

/// `(m · n) × n` matrix of the derivative, measurements stacked by rows.
#[derive(Debug, Clone)]
pub struct DenseJacobian {
    pub matrix: DMatrix<f64>,
    pub m: usize,
    pub source: JacobianSource,
}

impl DenseJacobian {
    pub fn n_nodes(&self) -> usize {
        self.matrix.ncols()
    }

    /// Block of rows belonging to measurement `j`.
    pub fn measurement(&self, j: usize) -> DMatrix<f64> {
        let n = self.n_nodes();
        self.matrix.rows(j * n, n).into_owned()
    }

    pub fn apply(&self, tau: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n_nodes();
        let y = &self.matrix * DVector::from_column_slice(tau);
        (0..self.m).map(|j| y.rows(j * n, n).iter().copied().collect()).collect()
    }

    /// `max_k ‖a_k − b_k‖ / ‖a_k‖` over columns.
    pub fn max_relative_column_difference(&self, other: &DenseJacobian) -> f64 {
        self.matrix
            .column_iter()
            .zip(other.matrix.column_iter())
            .map(|(a, b)| {
                let na = a.norm();
                if na == 0.0 {
                    (a - b).norm()
                } else {
                    (a - b).norm() / na
                }
            })
            .fold(0.0, f64::max)
    }
}

fn guard(mesh: &Mesh) -> Result<()> {
    if mesh.n_nodes() > DENSE_NODE_LIMIT {
        Err(Error::MeshTooLarge {
            nodes: mesh.n_nodes(),
            limit: DENSE_NODE_LIMIT,
        })
    } else {
        Ok(())
    }
}

fn to_dense(a: &crate::sparse::SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.n_rows(), a.n_cols());
    for (i, j, v) in a.triplets() {
        d[(i, j)] += v;
    }
    d
}

/// Column `k` is `E′(σ) e_k`.
pub fn build_dense_jacobian(ctx: &LinearizationContext<'_>) -> Result<DenseJacobian> {
    let mesh = ctx.mesh();
    guard(mesh)?;
    let n = mesh.n_nodes();
    let m = ctx.m();
    let mut matrix = DMatrix::zeros(m * n, n);
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        let col = ctx.apply_derivative(&e)?;
        e[k] = 0.0;
        for (j, c) in col.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                matrix[(j * n + i, k)] = *v;
            }
        }
    }
    Ok(DenseJacobian {
        matrix,
        m,
        source: JacobianSource::Columnwise,
    })
}

/// Central differences of the forward map with step `1e-6 ‖σ‖_∞`.
pub fn finite_difference_jacobian(mesh: &Mesh, sigma: &Conductivity, bcs: &[DirichletBc]) -> Result<DenseJacobian> {
    guard(mesh)?;
    let n = mesh.n_nodes();
    let m = bcs.len();
    let h = 1e-6 * sigma.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut matrix = DMatrix::zeros(m * n, n);
    for k in 0..n {
        let mut plus = sigma.values().to_vec();
        let mut minus = sigma.values().to_vec();
        plus[k] += h;
        minus[k] -= h;
        let ep = forward::forward_map(mesh, &Conductivity::new(mesh, plus, sigma.sigma_min())?, bcs)?;
        let em = forward::forward_map(mesh, &Conductivity::new(mesh, minus, sigma.sigma_min())?, bcs)?;
        for j in 0..m {
            for i in 0..n {
                matrix[(j * n + i, k)] = (ep.data[j][i] - em.data[j][i]) / (2.0 * h);
            }
        }
    }
    Ok(DenseJacobian {
        matrix,
        m,
        source: JacobianSource::FiniteDifference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointReport {
    /// Mismatch with the algebraic transpose of the dense Jacobian (`NaN`
    /// when the mesh is too large for dense operators).
    pub exact_transpose: f64,
    /// Mismatch with the adjoint operator used by the solver.
    pub continuous: f64,
    pub trials: usize,
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Max over random `(τ, z)` of `|⟨E′τ, z⟩_M − ⟨τ, E′*z⟩_M| / (‖τ‖_M ‖z‖_M)`.
///
/// `perturbation` scales the adjoint by `1 + perturbation`; it exists so that
/// a deliberately broken adjoint can be shown to fail the check.
pub fn adjoint_identity_report(
    ctx: &LinearizationContext<'_>,
    trials: usize,
    seed: u64,
    perturbation: f64,
) -> Result<AdjointReport> {
    let space = ctx.space();
    let n = space.n_nodes();
    let m = ctx.m();
    let dense = if n <= DENSE_NODE_LIMIT {
        Some(build_dense_jacobian(ctx)?)
    } else {
        None
    };
    let mass = to_dense(&space.mass);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let tau = random_field(&mut rng, n);
        let z: Vec<Vec<f64>> = (0..m).map(|_| random_field(&mut rng, n)).collect();
        let jt = ctx.apply_derivative(&tau)?;
        let lhs: f64 = jt.iter().zip(&z).map(|(a, b)| space.inner(a, b)).sum();
        let norm_z = z.iter().map(|v| space.inner(v, v)).sum::<f64>().sqrt();
        let scale = space.norm(&tau) * norm_z;
        if scale == 0.0 {
            continue;
        }
        let adj: Vec<f64> = ctx
            .apply_adjoint_pre_embedding(&z)?
            .into_iter()
            .map(|v| v * (1.0 + perturbation))
            .collect();
        worst.1 = worst.1.max((lhs - space.inner(&tau, &adj)).abs() / scale);
        if let Some(jac) = &dense {
            let mut jtmz = DVector::zeros(n);
            for (j, zj) in z.iter().enumerate() {
                let mz = &mass * DVector::from_column_slice(zj);
                jtmz += jac.measurement(j).transpose() * mz;
            }
            let rhs = DVector::from_column_slice(&tau).dot(&jtmz);
            worst.0 = worst.0.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(AdjointReport {
        exact_transpose: if dense.is_some() { worst.0 } else { f64::NAN },
        continuous: worst.1,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorFit {
    /// Least-squares slope of `log R(t)` against `log t`; `None` when exact.
    pub slope: Option<f64>,
    pub t_values: Vec<f64>,
    pub remainders: Vec<f64>,
    /// All remainders are at rounding level.
    pub exact: bool,
}

/// Fit the decay of `R(t) = ‖E(σ + tτ) − E(σ) − t E′(σ)τ‖_M`.
pub fn taylor_slope(
    space: &FemSpace,
    sigma: &Conductivity,
    tau: &[f64],
    bcs: &[DirichletBc],
    t_values: &[f64],
) -> Result<TaylorFit> {
    let mesh = &space.mesh;
    if t_values.len() < 2 || t_values.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("need at least two positive t values".into()));
    }
    let ctx = LinearizationContext::new(space, sigma.clone(), bcs)?;
    let base = ctx.forward_data().to_vec();
    let d = ctx.apply_derivative(tau)?;
    let data_norm = base.iter().map(|e| space.inner(e, e)).sum::<f64>().sqrt().max(1.0);
    let mut remainders = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let shifted: Vec<f64> = sigma.iter().zip(tau).map(|(s, x)| s + t * x).collect();
        if shifted.iter().any(|&v| v < sigma.sigma_min()) {
            return Err(Error::InvalidArgument(format!("sigma + t tau drops below sigma_min at t = {t}")));
        }
        let e = forward::forward_map(mesh, &Conductivity::new(mesh, shifted, sigma.sigma_min())?, bcs)?;
        let r2: f64 = (0..bcs.len())
            .map(|j| {
                let r: Vec<f64> = (0..mesh.n_nodes())
                    .map(|i| e.data[j][i] - base[j][i] - t * d[j][i])
                    .collect();
                space.inner(&r, &r)
            })
            .sum();
        remainders.push(r2.max(0.0).sqrt());
    }
    let exact = remainders.iter().all(|&r| r <= 1e-13 * data_norm);
    let slope = if exact {
        None
    } else {
        let xs: Vec<f64> = t_values.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = remainders.iter().map(|r| r.max(f64::MIN_POSITIVE).ln()).collect();
        Some(least_squares_slope(&xs, &ys))
    };
    Ok(TaylorFit {
        slope,
        t_values: t_values.to_vec(),
        remainders,
        exact,
    })
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Dense Gram matrix of the adjoint space.
fn dense_gram(space: &FemSpace, variant: AdjointVariant) -> Result<DMatrix<f64>> {
    let m = to_dense(&space.mass);
    Ok(match variant {
        AdjointVariant::L2 => m,
        AdjointVariant::H1 { beta } => &m + to_dense(&space.laplace) * (beta * beta),
        AdjointVariant::H2 { beta } => {
            let k = to_dense(&space.laplace);
            let minv_k = m
                .clone()
                .lu()
                .solve(&k)
                .ok_or_else(|| Error::SingularMatrix("dense oracle LU".into()))?;
            &m + (&k * minv_k) * (beta * beta)
        }
    })
}

/// `τ = (Jᵀ M J + α G)⁻¹ Jᵀ M r` from dense matrices.
pub fn dense_lm_step(
    ctx: &LinearizationContext<'_>,
    variant: AdjointVariant,
    alpha: f64,
    residual: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let jac = build_dense_jacobian(ctx)?;
    let space = ctx.space();
    let mass = to_dense(&space.mass);
    let n = space.n_nodes();
    let mut a = dense_gram(space, variant)? * alpha;
    let mut b = DVector::zeros(n);
    for (j, r) in residual.iter().enumerate() {
        let jj = jac.measurement(j);
        let mj = &mass * &jj;
        a += jj.transpose() * mj;
        b += jj.transpose() * (&mass * DVector::from_column_slice(r));
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularMatrix("dense oracle LU".into()))?;
    Ok(x.iter().copied().collect())
}

/// `‖E′(1)(ax + by)‖_M / ‖ax + by‖_M` for the single measurement `f = ax + by`.
pub fn kernel_ratio(space: &FemSpace, a: f64, b: f64) -> Result<f64> {
    let sigma = Conductivity::constant(&space.mesh, 1.0)?;
    let ctx = LinearizationContext::new(space, sigma, &[DirichletBc::Linear { a, b }])?;
    let tau = space.mesh.interpolate(|x, y| a * x + b * y);
    let d = ctx.apply_derivative(&tau)?;
    Ok(space.norm(&d[0]) / space.norm(&tau))
}

/// Mass-norm error of the FEM potential for the two-layer medium
/// (`σ_in = 2`, `σ_out = 1`, `R = 0.5`, `f = x`).
pub fn two_layer_potential_error(n_rings: usize) -> Result<f64> {
    let oracle = radial_two_layer_oracle(2.0, 1.0, 0.5)?;
    let space = FemSpace::new(build_disk_mesh(n_rings)?)?;
    let sigma = oracle.conductivity(&space.mesh)?;
    let u = forward::solve_potential(&space.mesh, &sigma, &DirichletBc::Linear { a: 1.0, b: 0.0 })?;
    let exact = space.mesh.interpolate(|x, y| oracle.potential(x, y));
    let d: Vec<f64> = u.iter().zip(&exact).map(|(p, q)| p - q).collect();
    Ok(space.norm(&d))
}

/// Smooth random field `offset + amplitude · Σ cₖ sin(ωₖ·x + φₖ)` with
/// `Σ |cₖ| = 1`.
pub fn random_smooth_field(mesh: &Mesh, rng: &mut ChaCha8Rng, offset: f64, amplitude: f64) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-2.5..2.5),
                rng.random_range(-2.5..2.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    let total: f64 = modes.iter().map(|m| m.3).sum();
    mesh.interpolate(|x, y| {
        offset
            + amplitude
                * modes
                    .iter()
                    .map(|&(wx, wy, ph, c)| c / total * (wx * x + wy * y + ph).sin())
                    .sum::<f64>()
    })
}

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((p, d)) => Self::new(name, p, d),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Relative perturbation applied to the adjoint in the identity check.
    pub adjoint_perturbation: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 20240229,
            adjoint_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub adjoint_perturbation: f64,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("verification suite (seed {})\n", self.seed);
        for c in &self.checks {
            s.push_str(&format!(
                "[{}] {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        let n_pass = self.checks.iter().filter(|c| c.passed).count();
        s.push_str(&format!("{n_pass}/{} checks passed\n", self.checks.len()));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fixed(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn ratios(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[0] / w[1]).collect()
}

fn check_forward_exactness() -> Result<(bool, String)> {
    let mesh = build_disk_mesh(24)?;
    let sigma = Conductivity::constant(&mesh, 1.0)?;
    let data = forward::forward_map(&mesh, &sigma, &forward::standard_bcs())?;
    let err = data
        .data
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    Ok((err <= 1e-8, format!("max |E - 1| = {err:.3e}")))
}

fn check_homogeneity() -> Result<(bool, String)> {
    let mesh = build_disk_mesh(24)?;
    let sigma = evaluate_phantom(&PhantomSpec::default(), &mesh, DEFAULT_SIGMA_MIN)?;
    let bcs = forward::standard_bcs();
    let base = forward::forward_map(&mesh, &sigma, &bcs)?;
    let mut worst = 0.0f64;
    for lambda in [0.5, 2.0, 10.0] {
        let e = forward::forward_map(&mesh, &sigma.scaled(lambda)?, &bcs)?;
        for (a, b) in e.data.iter().flatten().zip(base.data.iter().flatten()) {
            let denom = (lambda * b).abs().max(f64::MIN_POSITIVE);
            worst = worst.max((a - lambda * b).abs() / denom);
        }
    }
    Ok((worst <= 1e-10, format!("max relative deviation {worst:.3e}")))
}

fn check_two_layer() -> Result<(bool, String)> {
    let errs = [12, 24, 48]
        .iter()
        .map(|&r| two_layer_potential_error(r))
        .collect::<Result<Vec<_>>>()?;
    let q = ratios(&errs);
    Ok((
        q.iter().all(|&r| r >= 1.8),
        format!("errors {} ratios {}", sci(&errs), fixed(&q)),
    ))
}

fn check_derivative(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = FemSpace::new(build_disk_mesh(8)?)?;
    let bcs = forward::standard_bcs();
    let t_values: Vec<f64> = (2..=7).map(|k| 2f64.powi(-k)).collect();
    let mut slopes = Vec::new();
    for _ in 0..3 {
        let sigma = Conductivity::new(
            &space.mesh,
            random_smooth_field(&space.mesh, &mut rng, 3.0, 1.5),
            DEFAULT_SIGMA_MIN,
        )?;
        let tau = random_smooth_field(&space.mesh, &mut rng, 0.0, 1.0);
        let fit = taylor_slope(&space, &sigma, &tau, &bcs, &t_values)?;
        slopes.push(fit.slope.unwrap_or(f64::NAN));
    }
    let tiny = FemSpace::new(build_disk_mesh(2)?)?;
    let sigma = Conductivity::new(
        &tiny.mesh,
        random_smooth_field(&tiny.mesh, &mut rng, 3.0, 1.5),
        DEFAULT_SIGMA_MIN,
    )?;
    let ctx = LinearizationContext::new(&tiny, sigma.clone(), &bcs)?;
    let jc = build_dense_jacobian(&ctx)?;
    let jf = finite_difference_jacobian(&tiny.mesh, &sigma, &bcs)?;
    let fd = jc.max_relative_column_difference(&jf);
    let ok = slopes.iter().all(|s| (1.9..=2.1).contains(s)) && fd <= 1e-5;
    Ok((ok, format!("taylor slopes {}, FD column mismatch {fd:.3e}", fixed(&slopes))))
}

fn check_kernel() -> Result<(bool, String)> {
    let mut parts = Vec::new();
    let mut ok = true;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let spaces = [8, 16, 32]
        .iter()
        .map(|&r| FemSpace::new(build_disk_mesh(r)?))
        .collect::<Result<Vec<_>>>()?;
    for (a, b) in [(1.0, 0.0), (h, -h)] {
        let v = spaces
            .iter()
            .map(|s| kernel_ratio(s, a, b))
            .collect::<Result<Vec<_>>>()?;
        let q = ratios(&v);
        ok &= q.iter().all(|&r| r >= 1.8);
        parts.push(format!("({a:.3},{b:.3}): {} ratios {}", sci(&v), fixed(&q)));
    }
    Ok((ok, parts.join("; ")))
}

fn check_adjoint(seed: u64, perturbation: f64) -> Result<(bool, String)> {
    let bcs = forward::standard_bcs();
    let mut reports = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in [2, 3] {
        let space = FemSpace::new(build_disk_mesh(r)?)?;
        let sigma = Conductivity::new(
            &space.mesh,
            random_smooth_field(&space.mesh, &mut rng, 3.0, 1.5),
            DEFAULT_SIGMA_MIN,
        )?;
        let ctx = LinearizationContext::new(&space, sigma, &bcs)?;
        reports.push(adjoint_identity_report(&ctx, 5, rng.random(), perturbation)?);
    }
    let ok = reports[0].exact_transpose <= 1e-12
        && reports[1].exact_transpose <= 1e-12
        && reports[0].continuous <= 1e-8
        && continuous_non_increasing(reports[0].continuous, reports[1].continuous);
    Ok((
        ok,
        format!(
            "n_rings=2: transpose {:.3e}, adjoint {:.3e}; n_rings=3: transpose {:.3e}, adjoint {:.3e}",
            reports[0].exact_transpose, reports[0].continuous, reports[1].exact_transpose, reports[1].continuous
        ),
    ))
}

/// Rounding floor below which two adjoint mismatches count as equal.
pub const ADJOINT_ROUNDING_FLOOR: f64 = 1e-12;

/// `fine ≤ coarse`, with mismatches under the rounding floor treated as equal.
pub fn continuous_non_increasing(coarse: f64, fine: f64) -> bool {
    fine <= coarse || fine.max(coarse) <= ADJOINT_ROUNDING_FLOOR
}

fn check_lm_step(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = FemSpace::new(build_disk_mesh(2)?)?;
    let sigma = Conductivity::new(
        &space.mesh,
        random_smooth_field(&space.mesh, &mut rng, 3.0, 1.5),
        DEFAULT_SIGMA_MIN,
    )?;
    let ctx = LinearizationContext::new(&space, sigma, &[DirichletBc::Linear { a: 1.0, b: 0.0 }])?;
    let r = vec![random_smooth_field(&space.mesh, &mut rng, 0.5, 1.0)];
    let mut worst = 0.0f64;
    for alpha in [1e-2, 1.0] {
        let tau = assemble_lm_blocks(&ctx, AdjointVariant::L2, alpha, &r)?
            .solve()?
            .block("tau")?
            .to_vec();
        let dense = dense_lm_step(&ctx, AdjointVariant::L2, alpha, &r)?;
        let diff: Vec<f64> = tau.iter().zip(&dense).map(|(a, b)| a - b).collect();
        worst = worst.max(space.norm(&diff) / space.norm(&dense));
    }
    Ok((worst <= 1e-6, format!("max relative step difference {worst:.3e}")))
}

/// Run every check. The report depends only on `options`.
pub fn run_suite(options: SuiteOptions) -> SuiteReport {
    let seed = options.seed;
    let checks = vec![
        CheckResult::from_result("forward-exactness", check_forward_exactness()),
        CheckResult::from_result("homogeneity", check_homogeneity()),
        CheckResult::from_result("two-layer-oracle", check_two_layer()),
        CheckResult::from_result("derivative", check_derivative(seed)),
        CheckResult::from_result("kernel-decay", check_kernel()),
        CheckResult::from_result("adjoint-identity", check_adjoint(seed.wrapping_add(1), options.adjoint_perturbation)),
        CheckResult::from_result("lm-step-oracle", check_lm_step(seed.wrapping_add(2))),
    ];
    SuiteReport {
        seed,
        adjoint_perturbation: options.adjoint_perturbation,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FemSpace {
        FemSpace::new(build_disk_mesh(2).unwrap()).unwrap()
    }

    #[test]
    fn dense_guard() {
        let space = FemSpace::new(build_disk_mesh(9).unwrap()).unwrap();
        let ctx = LinearizationContext::new(
            &space,
            Conductivity::constant(&space.mesh, 1.0).unwrap(),
            &[DirichletBc::Linear { a: 1.0, b: 0.0 }],
        )
        .unwrap();
        assert!(matches!(build_dense_jacobian(&ctx), Err(Error::MeshTooLarge { .. })));
    }

    #[test]
    fn jacobian_matches_operator() {
        let space = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = Conductivity::new(&space.mesh, random_smooth_field(&space.mesh, &mut rng, 2.0, 0.5), 1e-12).unwrap();
        let ctx = LinearizationContext::new(&space, sigma, &forward::standard_bcs()).unwrap();
        let jac = build_dense_jacobian(&ctx).unwrap();
        let tau = random_field(&mut rng, space.n_nodes());
        let a = jac.apply(&tau);
        let b = ctx.apply_derivative(&tau).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_fields_give_zero_mismatch() {
        let space = tiny();
        let ctx = LinearizationContext::new(
            &space,
            Conductivity::constant(&space.mesh, 1.0).unwrap(),
            &[DirichletBc::Diagonal],
        )
        .unwrap();
        let r = adjoint_identity_report(&ctx, 0, 1, 0.0).unwrap();
        assert_eq!(r.continuous, 0.0);
    }

    #[test]
    fn perturbed_adjoint_is_detected() {
        let r = run_suite(SuiteOptions {
            adjoint_perturbation: 1e-3,
            ..Default::default()
        });
        let c = r.checks.iter().find(|c| c.name == "adjoint-identity").unwrap();
        assert!(!c.passed, "{}", c.detail);
        assert!(!r.passed());
    }

    #[test]
    fn taylor_exact_cases() {
        let space = FemSpace::new(build_disk_mesh(4).unwrap()).unwrap();
        let sigma = Conductivity::constant(&space.mesh, 2.0).unwrap();
        let bcs = [DirichletBc::Linear { a: 1.0, b: 0.0 }];
        let t = [0.25, 0.125, 0.0625];
        let fit = taylor_slope(&space, &sigma, &vec![0.0; space.n_nodes()], &bcs, &t).unwrap();
        assert!(fit.exact && fit.remainders.iter().all(|&r| r == 0.0));
        let fit = taylor_slope(&space, &sigma, &vec![0.7; space.n_nodes()], &bcs, &t).unwrap();
        assert!(fit.exact, "{:?}", fit.remainders);
    }

    #[test]
    fn slope_fit() {
        let xs: Vec<f64> = (1..6).map(|k| (k as f64).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 0.3).collect();
        assert!((least_squares_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rounding_floor() {
        assert!(continuous_non_increasing(1e-15, 3e-15));
        assert!(continuous_non_increasing(1e-6, 1e-7));
        assert!(!continuous_non_increasing(1e-9, 1e-8));
    }
}
