//! Levenberg–Marquardt iteration for the power-density inverse problem.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::forward::{Conductivity, MeasurementSet};
use crate::linearization::{assemble_lm_blocks, AdjointVariant, LinearizationContext};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjointKind {
    L2,
    H1,
    H2,
}

impl std::str::FromStr for AdjointKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Self::L2),
            "h1" => Ok(Self::H1),
            "h2" => Ok(Self::H2),
            _ => Err(Error::Parse(format!("unknown adjoint `{s}` (expected l2, h1 or h2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub alpha0: f64,
    pub decay: f64,
    pub alpha_min: f64,
    pub beta: f64,
    pub adjoint: AdjointKind,
    pub max_iters: usize,
    pub sigma_min: f64,
    /// Constant initial guess.
    pub sigma0: f64,
    /// Enables the a-posteriori choice of `α` when set.
    pub hanke_q: Option<f64>,
    /// Stop once the data residual drops to this value.
    pub discrepancy: Option<f64>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            decay: 0.5,
            alpha_min: 1e-8,
            beta: 1e-3,
            adjoint: AdjointKind::H1,
            max_iters: 15,
            sigma_min: 1e-12,
            sigma0: 1.0,
            hanke_q: None,
            discrepancy: None,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha0 > 0.0) {
            return bad(format!("lm.alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("lm.decay must lie in (0, 1), got {}", self.decay));
        }
        if !(self.alpha_min > 0.0) {
            return bad(format!("lm.alpha_min must be positive, got {}", self.alpha_min));
        }
        if !(self.sigma_min > 0.0) {
            return bad(format!("lm.sigma_min must be positive, got {}", self.sigma_min));
        }
        if !(self.sigma0 >= self.sigma_min) {
            return bad(format!("lm.sigma0 must be >= sigma_min, got {}", self.sigma0));
        }
        if let Some(q) = self.hanke_q {
            if !(q > 0.0 && q < 1.0) {
                return bad(format!("lm.hanke_q must lie in (0, 1), got {q}"));
            }
        }
        if let Some(d) = self.discrepancy {
            if !(d >= 0.0) {
                return bad(format!("lm.discrepancy must be >= 0, got {d}"));
            }
        }
        self.variant().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn variant(&self) -> AdjointVariant {
        match self.adjoint {
            AdjointKind::L2 => AdjointVariant::L2,
            AdjointKind::H1 => AdjointVariant::H1 { beta: self.beta },
            AdjointKind::H2 => AdjointVariant::H2 { beta: self.beta },
        }
    }
}

/// `max(α₀ · decayᵏ, α_min)`.
pub fn alpha_schedule(k: usize, config: &LmConfig) -> f64 {
    let e = i32::try_from(k).unwrap_or(i32::MAX);
    (config.alpha0 * config.decay.powi(e)).max(config.alpha_min)
}

/// One line of the per-iteration log. Record `k` describes the iterate
/// `σ_k` and the step taken from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub alpha: f64,
    /// `‖E(σ_k) − E^δ‖_M`.
    pub residual: f64,
    /// `‖τ_k‖_M`.
    pub step_norm: f64,
    /// `‖σ_k − σ_true‖_M / ‖σ_true‖_M` when the truth is known.
    pub rel_error: Option<f64>,
    /// Wall time since the start of the run.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub sigma: Conductivity,
    pub k: usize,
    pub history: Vec<IterationRecord>,
}

/// Stacked mass norm over measurements.
pub fn data_norm(space: &FemSpace, fields: &[Vec<f64>]) -> f64 {
    fields.iter().map(|f| space.inner(f, f)).sum::<f64>().max(0.0).sqrt()
}

pub fn relative_error(space: &FemSpace, estimate: &[f64], truth: &[f64]) -> f64 {
    let d: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| a - b).collect();
    space.norm(&d) / space.norm(truth)
}

/// Nodal `max(σ + τ, σ_min)`.
pub fn clamp_update(mesh: &Mesh, sigma: &Conductivity, tau: &[f64], sigma_min: f64) -> Result<Conductivity> {
    if tau.len() != sigma.len() {
        return Err(Error::DimensionMismatch {
            expected: sigma.len(),
            got: tau.len(),
        });
    }
    let v: Vec<f64> = sigma.iter().zip(tau).map(|(s, t)| s + t).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite conductivity update".into()));
    }
    Conductivity::clamped(mesh, v, sigma_min)
}

/// The step `τ` solving the block system at `α`.
pub fn solve_step(ctx: &LinearizationContext<'_>, variant: AdjointVariant, alpha: f64, residual: &[Vec<f64>]) -> Result<Vec<f64>> {
    let sol = assemble_lm_blocks(ctx, variant, alpha, residual)?.solve()?;
    Ok(sol.block("tau")?.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub tau: Vec<f64>,
    pub alpha: f64,
    pub residual_norm: f64,
    pub step_norm: f64,
}

/// One LM step from `state.sigma` with the given `α`.
pub fn lm_step(
    space: &FemSpace,
    state: &LmState,
    data: &MeasurementSet,
    config: &LmConfig,
    alpha: f64,
) -> Result<StepOutcome> {
    let ctx = LinearizationContext::new(space, state.sigma.clone(), &data.bcs)?;
    let r = ctx.residual(data)?;
    let tau = solve_step(&ctx, config.variant(), alpha, &r)?;
    Ok(StepOutcome {
        step_norm: space.norm(&tau),
        residual_norm: data_norm(space, &r),
        tau,
        alpha,
    })
}

/// One trial of the a-posteriori rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HankeTrial {
    pub alpha: f64,
    /// `‖r − E′τ(α)‖ / ‖r‖`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HankeChoice {
    pub alpha: f64,
    pub trials: Vec<HankeTrial>,
    /// False when no bracket was found and the a-priori value is returned.
    pub bracketed: bool,
}

const HANKE_MAX_TRIALS: usize = 20;

fn linearized_ratio(ctx: &LinearizationContext<'_>, variant: AdjointVariant, alpha: f64, r: &[Vec<f64>]) -> Result<f64> {
    let space = ctx.space();
    let tau = solve_step(ctx, variant, alpha, r)?;
    let d = ctx.apply_derivative(&tau)?;
    let lin: Vec<Vec<f64>> = r
        .iter()
        .zip(&d)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    Ok(data_norm(space, &lin) / data_norm(space, r))
}

/// Choose `α` so that the linearized residual ratio lies in `[q, 1.1 q]`,
/// bisecting on `log α` from the a-priori value.
pub fn hanke_alpha(
    ctx: &LinearizationContext<'_>,
    residual: &[Vec<f64>],
    config: &LmConfig,
    k: usize,
) -> Result<HankeChoice> {
    let q = config
        .hanke_q
        .ok_or_else(|| Error::Config("hanke_alpha needs lm.hanke_q".into()))?;
    let variant = config.variant();
    let prior = alpha_schedule(k, config);
    let (lo_t, hi_t) = (q, 1.1 * q);
    let mut trials = Vec::new();
    let eval = |alpha: f64, trials: &mut Vec<HankeTrial>| -> Result<f64> {
        let ratio = linearized_ratio(ctx, variant, alpha, residual)?;
        trials.push(HankeTrial { alpha, ratio });
        Ok(ratio)
    };
    // Bracket: `below` has ratio < q, `above` has ratio > 1.1 q.
    let mut below: Option<f64> = None;
    let mut above: Option<f64> = None;
    let mut alpha = prior;
    while trials.len() < HANKE_MAX_TRIALS {
        let ratio = eval(alpha, &mut trials)?;
        if (lo_t..=hi_t).contains(&ratio) {
            return Ok(HankeChoice { alpha, trials, bracketed: true });
        }
        if ratio < lo_t {
            below = Some(alpha);
        } else {
            above = Some(alpha);
        }
        alpha = match (below, above) {
            (Some(b), Some(a)) => (0.5 * (b.ln() + a.ln())).exp(),
            (Some(b), None) => b * 10.0,
            (None, Some(a)) => a / 10.0,
            (None, None) => unreachable!(),
        };
    }
    // Best bracketing value: the largest α whose ratio stayed below q, which
    // errs on the side of a smaller, safer step than the target.
    match below.or(above) {
        Some(a) if below.is_some() && above.is_some() => Ok(HankeChoice { alpha: a, trials, bracketed: true }),
        _ => Ok(HankeChoice {
            alpha: prior,
            trials,
            bracketed: false,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LmStatus {
    /// Ran the configured number of iterations.
    Completed,
    /// Stopped by the discrepancy rule.
    Discrepancy,
    /// The data residual vanished.
    ExactFit,
    /// A step failed; the history is partial.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub sigma: Conductivity,
    pub history: Vec<IterationRecord>,
    pub status: LmStatus,
    /// Residual and error of the returned iterate.
    pub final_residual: f64,
    pub final_rel_error: Option<f64>,
    pub warnings: Vec<String>,
}

/// Residuals at or below this fraction of the data norm count as zero.
const EXACT_FIT_RTOL: f64 = 1e-12;

/// Canonical measurement order: by boundary-condition descriptor, then by
/// the bit patterns of the data.
pub fn canonical_order(data: &MeasurementSet) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.m()).collect();
    idx.sort_by(|&a, &b| {
        data.bcs[a]
            .descriptor()
            .cmp(&data.bcs[b].descriptor())
            .then_with(|| {
                let ka = data.data[a].iter().map(|v| v.to_bits());
                let kb = data.data[b].iter().map(|v| v.to_bits());
                ka.cmp(kb)
            })
    });
    idx
}

/// Run the iteration from `sigma0`. `on_record` sees every record as soon as
/// it is complete.
pub fn run_lm(
    space: &FemSpace,
    sigma0: Conductivity,
    data: &MeasurementSet,
    config: &LmConfig,
    truth: Option<&[f64]>,
    mut on_record: impl FnMut(&IterationRecord),
) -> Result<LmOutcome> {
    config.validate()?;
    data.check_mesh(&space.mesh)?;
    let data = data.subset(&canonical_order(data))?;
    let start = Instant::now();
    let scale = data_norm(space, &data.data);
    let variant = config.variant();
    let mut state = LmState {
        sigma: sigma0,
        k: 0,
        history: Vec::new(),
    };
    let mut warnings = Vec::new();
    let err_of = |s: &Conductivity| truth.map(|t| relative_error(space, s, t));

    let status = loop {
        let ctx = match LinearizationContext::new(space, state.sigma.clone(), &data.bcs) {
            Ok(c) => c,
            Err(e) => break LmStatus::Failed(e.to_string()),
        };
        let r = ctx.residual(&data)?;
        let rho = data_norm(space, &r);
        if state.k >= config.max_iters {
            break LmStatus::Completed;
        }
        let k = state.k;
        let mut record = IterationRecord {
            k,
            alpha: alpha_schedule(k, config),
            residual: rho,
            step_norm: 0.0,
            rel_error: err_of(&state.sigma),
            seconds: 0.0,
        };
        if rho <= EXACT_FIT_RTOL * scale {
            record.seconds = start.elapsed().as_secs_f64();
            on_record(&record);
            state.history.push(record);
            break LmStatus::ExactFit;
        }
        if config.discrepancy.is_some_and(|d| rho <= d) {
            break LmStatus::Discrepancy;
        }
        if config.hanke_q.is_some() {
            match hanke_alpha(&ctx, &r, config, k) {
                Ok(choice) => {
                    if !choice.bracketed {
                        warnings.push(format!("iteration {k}: no alpha bracket found, using the a-priori value"));
                    }
                    record.alpha = choice.alpha;
                }
                Err(e) => break LmStatus::Failed(e.to_string()),
            }
        }
        let tau = match solve_step(&ctx, variant, record.alpha, &r) {
            Ok(t) => t,
            Err(e) => break LmStatus::Failed(e.to_string()),
        };
        record.step_norm = space.norm(&tau);
        state.sigma = clamp_update(&space.mesh, &state.sigma, &tau, config.sigma_min)?;
        state.k += 1;
        record.seconds = start.elapsed().as_secs_f64();
        on_record(&record);
        state.history.push(record);
    };

    let final_residual = match &status {
        LmStatus::Failed(_) => state.history.last().map_or(f64::NAN, |r| r.residual),
        _ => {
            let e = crate::forward::forward_map(&space.mesh, &state.sigma, &data.bcs)?;
            let r: Vec<Vec<f64>> = e
                .data
                .iter()
                .zip(&data.data)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect();
            data_norm(space, &r)
        }
    };
    Ok(LmOutcome {
        final_rel_error: err_of(&state.sigma),
        sigma: state.sigma,
        history: state.history,
        status,
        final_residual,
        warnings,
    })
}
