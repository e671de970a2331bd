//! Ground-truth conductivities and a closed-form two-layer solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Conductivity;
use crate::mesh::Mesh;

const INTERFACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

/// `clamp(background + Σ aᵢ exp(−‖x − cᵢ‖² / wᵢ²), lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub background: f64,
    #[serde(default)]
    pub bumps: Vec<Bump>,
    pub clamp: [f64; 2],
}

impl Default for PhantomSpec {
    /// Two Gaussian inclusions spanning the range `[1, 10]`.
    fn default() -> Self {
        Self {
            background: 1.0,
            bumps: vec![
                Bump {
                    center: [0.3, 0.2],
                    width: 0.3,
                    amplitude: 9.0,
                },
                Bump {
                    center: [-0.35, -0.3],
                    width: 0.25,
                    amplitude: 4.0,
                },
            ],
            clamp: [1.0, 10.0],
        }
    }
}

impl PhantomSpec {
    pub fn constant(value: f64) -> Self {
        Self {
            background: value,
            bumps: Vec::new(),
            clamp: [value, value],
        }
    }

    pub fn validate(&self, sigma_min: f64) -> Result<()> {
        let [lo, hi] = self.clamp;
        if !(self.background > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "phantom background must be positive, got {}",
                self.background
            )));
        }
        if !(lo > 0.0 && lo >= sigma_min && hi >= lo) {
            return Err(Error::InvalidArgument(format!(
                "invalid phantom clamp [{lo}, {hi}] (needs sigma_min <= lo <= hi, lo > 0)"
            )));
        }
        if let Some(b) = self.bumps.iter().find(|b| !(b.width > 0.0) || !b.amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid bump {b:?}")));
        }
        Ok(())
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .bumps
            .iter()
            .map(|b| {
                let d2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
                b.amplitude * (-d2 / (b.width * b.width)).exp()
            })
            .sum();
        (self.background + s).clamp(self.clamp[0], self.clamp[1])
    }
}

pub fn evaluate_phantom(spec: &PhantomSpec, mesh: &Mesh, sigma_min: f64) -> Result<Conductivity> {
    spec.validate(sigma_min)?;
    Conductivity::new(mesh, mesh.interpolate(|x, y| spec.value_at(x, y)), sigma_min)
}

/// Exact solution of `div(σ∇u) = 0` on the unit disk with `u = x` on the
/// boundary and `σ = σ_in` for `r < R`, `σ_out` otherwise:
/// `u = A r cosθ` inside and `(B r + C/r) cosθ` outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLayerOracle {
    pub sigma_in: f64,
    pub sigma_out: f64,
    pub radius: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub fn radial_two_layer_oracle(sigma_in: f64, sigma_out: f64, radius: f64) -> Result<TwoLayerOracle> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(Error::InvalidArgument(format!("interface radius must lie in (0, 1), got {radius}")));
    }
    if !(sigma_in > 0.0 && sigma_out > 0.0) {
        return Err(Error::InvalidArgument("layer conductivities must be positive".into()));
    }
    let r = radius;
    // Unknowns (A, B, C). Rows: u = cosθ at r = 1; continuity of u at r = R;
    // continuity of σ ∂ᵣu at r = R.
    let m = [
        [0.0, 1.0, 1.0],
        [r, -r, -1.0 / r],
        [sigma_in, -sigma_out, sigma_out / (r * r)],
    ];
    let rhs = [1.0, 0.0, 0.0];
    let [a, b, c] = solve3(m, rhs)?;
    let res = (0..3)
        .map(|i| (m[i][0] * a + m[i][1] * b + m[i][2] * c - rhs[i]).abs())
        .fold(0.0, f64::max);
    if res > 1e-14 * (1.0 + sigma_in.max(sigma_out) / (r * r)) {
        return Err(Error::ResidualContract { residual: res });
    }
    Ok(TwoLayerOracle {
        sigma_in,
        sigma_out,
        radius,
        a,
        b,
        c,
    })
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Result<[f64; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let x = m
        .lu()
        .solve(&nalgebra::Vector3::from(b))
        .ok_or_else(|| Error::SingularMatrix("two-layer coefficient system".into()))?;
    Ok([x[0], x[1], x[2]])
}

impl TwoLayerOracle {
    pub fn sigma(&self, x: f64, y: f64) -> f64 {
        if x.hypot(y) < self.radius {
            self.sigma_in
        } else {
            self.sigma_out
        }
    }

    /// Nodal sampling of `σ`: nodes on the interface circle take the mean of
    /// the two layers.
    pub fn sigma_nodal(&self, x: f64, y: f64) -> f64 {
        if (x.hypot(y) - self.radius).abs() < INTERFACE_TOL {
            0.5 * (self.sigma_in + self.sigma_out)
        } else {
            self.sigma(x, y)
        }
    }

    pub fn potential(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        if r2 < self.radius * self.radius {
            self.a * x
        } else {
            // (B r + C/r) cosθ = B x + C x / r²
            self.b * x + self.c * x / r2
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let r2 = x * x + y * y;
        if r2 < self.radius * self.radius {
            [self.a, 0.0]
        } else {
            let r4 = r2 * r2;
            [self.b + self.c * (y * y - x * x) / r4, -2.0 * self.c * x * y / r4]
        }
    }

    pub fn power_density(&self, x: f64, y: f64) -> f64 {
        let g = self.gradient(x, y);
        self.sigma(x, y) * (g[0] * g[0] + g[1] * g[1])
    }

    /// Nodal conductivity for the two-layer medium.
    pub fn conductivity(&self, mesh: &Mesh) -> Result<Conductivity> {
        Conductivity::new(mesh, mesh.interpolate(|x, y| self.sigma_nodal(x, y)), crate::forward::DEFAULT_SIGMA_MIN)
    }
}
