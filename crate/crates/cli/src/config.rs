//! Experiment configuration.
//!
//! Files use flat dotted keys (`mesh.n_rings = 24`, `lm.beta = 1e-3`), which
//! is plain TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use powerdensity::fem::DirichletBc;
use powerdensity::forward::DEFAULT_SIGMA_MIN;
use powerdensity::lm::{AdjointKind, LmConfig};
use powerdensity::phantom::PhantomSpec;
use powerdensity::verification::SuiteOptions;
use serde::{Deserialize, Serialize};

use crate::error::{RunError, RunResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Rings of the reconstruction mesh.
    pub n_rings: usize,
    /// Rings of the simulation mesh. Data are simulated there and
    /// interpolated onto the reconstruction mesh, so this must be a multiple
    /// of `n_rings`.
    pub sim_n_rings: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            n_rings: 24,
            sim_n_rings: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Absolute standard deviation of the additive Gaussian noise.
    pub std: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { std: 0.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: bool,
    pub vtk: bool,
    pub png: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: true,
            vtk: false,
            png: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Boundary conditions: `x`, `y`, `diagonal` or `linear:a,b`.
    pub bcs: Vec<String>,
    /// 1-based subset of `bcs` used by `reconstruct`; all when empty.
    pub measurements: Vec<usize>,
    pub mesh: MeshConfig,
    pub phantom: PhantomSpec,
    pub noise: NoiseConfig,
    pub lm: LmConfig,
    pub verify: SuiteOptions,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bcs: vec!["x".into(), "y".into(), "diagonal".into()],
            measurements: Vec::new(),
            mesh: MeshConfig::default(),
            phantom: PhantomSpec::default(),
            noise: NoiseConfig::default(),
            lm: LmConfig::default(),
            verify: SuiteOptions::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> RunResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> RunResult<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_toml(&text)?, text))
    }

    /// Fully resolved configuration, replayable as-is.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> RunResult<()> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.mesh.n_rings == 0 {
            return bad("mesh.n_rings must be positive".into());
        }
        if self.mesh.sim_n_rings < self.mesh.n_rings || !self.mesh.sim_n_rings.is_multiple_of(self.mesh.n_rings) {
            return bad(format!(
                "mesh.sim_n_rings ({}) must be a multiple of mesh.n_rings ({})",
                self.mesh.sim_n_rings, self.mesh.n_rings
            ));
        }
        if self.bcs.is_empty() {
            return bad("bcs must list at least one boundary condition".into());
        }
        self.boundary_conditions()?;
        self.measurement_indices()?;
        if !(self.noise.std >= 0.0 && self.noise.std.is_finite()) {
            return bad(format!("noise.std must be finite and >= 0, got {}", self.noise.std));
        }
        self.phantom.validate(DEFAULT_SIGMA_MIN)?;
        self.lm.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if !self.verify.adjoint_perturbation.is_finite() {
            return bad("verify.adjoint_perturbation must be finite".into());
        }
        Ok(())
    }

    pub fn boundary_conditions(&self) -> RunResult<Vec<DirichletBc>> {
        self.bcs
            .iter()
            .map(|s| DirichletBc::parse(s).map_err(|e| RunError::Config(format!("bcs: {e}"))))
            .collect()
    }

    /// 0-based indices of the measurements to reconstruct from.
    pub fn measurement_indices(&self) -> RunResult<Vec<usize>> {
        if self.measurements.is_empty() {
            return Ok((0..self.bcs.len()).collect());
        }
        let mut seen = vec![false; self.bcs.len()];
        self.measurements
            .iter()
            .map(|&i| {
                if i == 0 || i > self.bcs.len() {
                    return Err(RunError::Config(format!(
                        "measurement {i} out of range 1..={}",
                        self.bcs.len()
                    )));
                }
                if std::mem::replace(&mut seen[i - 1], true) {
                    return Err(RunError::Config(format!("measurement {i} listed twice")));
                }
                Ok(i - 1)
            })
            .collect()
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub adjoint: Option<AdjointKind>,
    pub measurements: Option<Vec<usize>>,
}

impl Overrides {
    /// `--seed` sets both the noise seed and the verification seed.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> RunResult<()> {
        if let Some(out) = &self.out {
            cfg.output.dir.clone_from(out);
        }
        if let Some(seed) = self.seed {
            cfg.noise.seed = seed;
            cfg.verify.seed = seed;
        }
        if let Some(a) = self.adjoint {
            cfg.lm.adjoint = a;
        }
        if let Some(m) = &self.measurements {
            cfg.measurements.clone_from(m);
        }
        cfg.validate()
    }
}

/// Parse a 1-based list such as `1,3`.
pub fn parse_measurements(s: &str) -> RunResult<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| RunError::Usage(format!("bad measurement index `{t}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn dotted_keys() {
        let c = ExperimentConfig::from_toml(
            "mesh.n_rings = 8\nmesh.sim_n_rings = 16\nlm.adjoint = \"h2\"\nlm.beta = 0.01\nnoise.std = 1.0\nbcs = [\"x\", \"linear:1,1\"]\n",
        )
        .unwrap();
        assert_eq!(c.mesh.n_rings, 8);
        assert_eq!(c.lm.adjoint, AdjointKind::H2);
        assert_eq!(c.lm.beta, 0.01);
        assert_eq!(c.lm.max_iters, 15);
        assert_eq!(c.boundary_conditions().unwrap()[1], DirichletBc::Linear { a: 1.0, b: 1.0 });
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        for text in [
            "mesh.nrings = 8",
            "lm.speed = 2",
            "colour = 1",
            "mesh.n_rings = 10\nmesh.sim_n_rings = 15",
            "lm.decay = 1.5",
            "bcs = [\"z\"]",
            "measurements = [4]",
            "measurements = [1, 1]",
            "noise.std = -1.0",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(RunError::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        Overrides {
            out: Some("elsewhere".into()),
            seed: Some(9),
            adjoint: Some(AdjointKind::L2),
            measurements: Some(vec![2, 1]),
        }
        .apply(&mut c)
        .unwrap();
        assert_eq!(c.output.dir, PathBuf::from("elsewhere"));
        assert_eq!((c.noise.seed, c.verify.seed), (9, 9));
        assert_eq!(c.lm.adjoint, AdjointKind::L2);
        assert_eq!(c.measurement_indices().unwrap(), vec![1, 0]);
        assert_eq!(parse_measurements("1, 3").unwrap(), vec![1, 3]);
        assert!(parse_measurements("a").is_err());
    }
}
