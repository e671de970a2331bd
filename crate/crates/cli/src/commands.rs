//! The `simulate`, `reconstruct`, `verify` and `mesh-info` commands.
//!
//! Every command writes the resolved `config.toml`, a verbatim copy of the
//! input config when there is one, and `manifest.json` with the version and
//! seeds. Output files contain no timestamps, so rerunning a command from a
//! directory's own `config.toml` reproduces its fields and metrics exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use powerdensity::fem::{DirichletBc, FemSpace};
use powerdensity::forward::{add_noise, forward_map, Conductivity, MeasurementSet, Noise};
use powerdensity::lm::{run_lm, IterationRecord, LmStatus};
use powerdensity::mesh::{build_disk_mesh, Mesh};
use powerdensity::phantom::evaluate_phantom;
use powerdensity::verification::{run_suite, SuiteReport};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{RunError, RunResult};
use crate::io::{
    read_field_csv, read_json, write_field_csv, write_heatmap, write_json, write_vtk, Manifest, MeshSummary, Seeds,
    DIFFERENCE_RANGE, SIGMA_RANGE,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const CONFIG_INPUT: &str = "config.input.toml";
pub const MESH: &str = "mesh.txt";
pub const TRUTH: &str = "sigma_true.csv";
pub const HISTORY: &str = "history.jsonl";
pub const METRICS: &str = "metrics.json";
pub const SIGMA_FINAL: &str = "sigma_final.csv";
pub const DIFFERENCE: &str = "difference.csv";
/// Copy of the data a reconstruction read, so it can be replayed in place.
pub const INPUT_DIR: &str = "input";

pub fn exact_file(j: usize) -> String {
    format!("exact_{j}.csv")
}

pub fn noisy_file(j: usize) -> String {
    format!("noisy_{j}.csv")
}

fn prepare_dir(dir: &Path) -> RunResult<()> {
    fs::create_dir_all(dir).map_err(RunError::io(format!("creating {}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> RunResult<()> {
    fs::write(path, text).map_err(RunError::io(format!("writing {}", path.display())))
}

fn write_configs(dir: &Path, cfg: &ExperimentConfig, input: Option<&str>) -> RunResult<()> {
    write_text(&dir.join(CONFIG), &cfg.to_toml())?;
    match input {
        Some(text) => write_text(&dir.join(CONFIG_INPUT), text),
        None => Ok(()),
    }
}

fn manifest(command: &str, cfg: &ExperimentConfig, mesh: &Mesh, bcs: &[DirichletBc], files: Vec<String>) -> Manifest {
    Manifest {
        tool: "pdlm".into(),
        version: VERSION.into(),
        command: command.into(),
        config: CONFIG.into(),
        seeds: Seeds {
            noise: cfg.noise.seed,
            verify: cfg.verify.seed,
        },
        mesh: MeshSummary::of(mesh, Some(cfg.mesh.sim_n_rings)),
        bcs: bcs.iter().map(DirichletBc::descriptor).collect(),
        noise_std: Some(cfg.noise.std),
        files,
    }
}

/// Simulate exact and noisy power densities for every configured boundary
/// condition. Data are computed on the simulation mesh, interpolated onto
/// the reconstruction mesh, and then perturbed.
pub fn cmd_simulate(cfg: &ExperimentConfig, config_text: Option<&str>) -> RunResult<Manifest> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    let bcs = cfg.boundary_conditions()?;
    let sigma_min = cfg.lm.sigma_min;
    let mesh = build_disk_mesh(cfg.mesh.n_rings)?;
    let exact = if cfg.mesh.sim_n_rings == cfg.mesh.n_rings {
        let truth = evaluate_phantom(&cfg.phantom, &mesh, sigma_min)?;
        forward_map(&mesh, &truth, &bcs)?
    } else {
        let fine = build_disk_mesh(cfg.mesh.sim_n_rings)?;
        let truth = evaluate_phantom(&cfg.phantom, &fine, sigma_min)?;
        forward_map(&fine, &truth, &bcs)?.transfer(&fine, &mesh)?
    };
    let noisy = add_noise(&exact, cfg.noise.std, cfg.noise.seed)?;
    let truth = evaluate_phantom(&cfg.phantom, &mesh, sigma_min)?;

    let mut files = vec![MESH.to_string(), TRUTH.to_string()];
    write_text(&dir.join(MESH), &mesh.to_text())?;
    write_field_csv(&dir.join(TRUTH), &mesh, &truth)?;
    for j in 0..exact.m() {
        let (e, n) = (exact_file(j + 1), noisy_file(j + 1));
        write_field_csv(&dir.join(&e), &mesh, &exact.data[j])?;
        write_field_csv(&dir.join(&n), &mesh, &noisy.data[j])?;
        files.extend([e, n]);
    }
    if cfg.output.vtk {
        let mut fields: Vec<(String, &[f64])> = vec![("sigma_true".into(), &truth)];
        for j in 0..exact.m() {
            fields.push((format!("exact_{}", j + 1), &exact.data[j]));
            fields.push((format!("noisy_{}", j + 1), &noisy.data[j]));
        }
        let refs: Vec<(&str, &[f64])> = fields.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        write_vtk(&dir.join("data.vtk"), &mesh, &refs)?;
        files.push("data.vtk".into());
    }
    if cfg.output.png {
        write_heatmap(&dir.join("sigma_true.png"), &mesh, &truth, SIGMA_RANGE)?;
        files.push("sigma_true.png".into());
    }
    write_configs(dir, cfg, config_text)?;
    let m = manifest("simulate", cfg, &mesh, &bcs, files);
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(m)
}

/// Data read back from a `simulate` output directory.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub mesh: Mesh,
    pub data: MeasurementSet,
    pub truth: Option<Vec<f64>>,
    pub manifest: Manifest,
}

pub fn load_data(dir: &Path) -> RunResult<LoadedData> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let mesh_path = dir.join(MESH);
    let text = fs::read_to_string(&mesh_path).map_err(RunError::io(format!("reading {}", mesh_path.display())))?;
    let mesh = Mesh::from_text(&text)?;
    let bcs = manifest
        .bcs
        .iter()
        .map(|s| DirichletBc::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    let data = (1..=bcs.len())
        .map(|j| read_field_csv(&dir.join(noisy_file(j)), &mesh))
        .collect::<RunResult<Vec<_>>>()?;
    let noise = match manifest.noise_std {
        Some(std) if std > 0.0 => Noise::Gaussian {
            std,
            seed: manifest.seeds.noise,
        },
        _ => Noise::Exact,
    };
    let truth_path = dir.join(TRUTH);
    let truth = if truth_path.exists() {
        Some(read_field_csv(&truth_path, &mesh)?)
    } else {
        None
    };
    Ok(LoadedData {
        data: MeasurementSet::new(bcs, data, noise)?,
        mesh,
        truth,
        manifest,
    })
}

/// Summary written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub status: String,
    pub iterations: usize,
    /// 1-based indices into the data directory's measurements.
    pub measurements: Vec<usize>,
    pub initial_residual: Option<f64>,
    pub final_residual: f64,
    pub final_rel_error: Option<f64>,
    pub warnings: Vec<String>,
}

fn copy_inputs(from: &Path, to: &Path, manifest: &Manifest) -> RunResult<()> {
    if from.canonicalize().ok() == to.canonicalize().ok() {
        return Ok(());
    }
    prepare_dir(to)?;
    let mut names: Vec<String> = vec![MANIFEST.into(), MESH.into()];
    names.extend((1..=manifest.bcs.len()).map(noisy_file));
    if from.join(TRUTH).exists() {
        names.push(TRUTH.into());
    }
    for name in names {
        fs::copy(from.join(&name), to.join(&name)).map_err(RunError::io(format!("copying {name}")))?;
    }
    Ok(())
}

/// Run the LM reconstruction on the data in `data_dir`.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, config_text: Option<&str>, data_dir: &Path) -> RunResult<Metrics> {
    cfg.validate()?;
    let loaded = load_data(data_dir)?;
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;

    let mesh = build_disk_mesh(cfg.mesh.n_rings)?;
    let (data, truth) = if loaded.mesh.n_rings() == mesh.n_rings() {
        (loaded.data.clone(), loaded.truth.clone())
    } else if loaded.mesh.n_rings() % mesh.n_rings() == 0 {
        let t = match &loaded.truth {
            Some(t) => Some(mesh.interpolate_from(&loaded.mesh, t)?),
            None => None,
        };
        (loaded.data.transfer(&loaded.mesh, &mesh)?, t)
    } else {
        return Err(RunError::Input {
            path: data_dir.display().to_string(),
            message: format!(
                "data mesh has {} rings; it cannot be interpolated onto {} rings",
                loaded.mesh.n_rings(),
                mesh.n_rings()
            ),
        });
    };
    let m_total = data.m();
    let indices: Vec<usize> = if cfg.measurements.is_empty() {
        (0..m_total).collect()
    } else {
        cfg.measurements
            .iter()
            .map(|&i| {
                if i == 0 || i > m_total {
                    Err(RunError::Config(format!("measurement {i} out of range 1..={m_total}")))
                } else {
                    Ok(i - 1)
                }
            })
            .collect::<RunResult<_>>()?
    };
    let data = data.subset(&indices)?;

    let space = FemSpace::new(mesh)?;
    let sigma0 = Conductivity::new(&space.mesh, vec![cfg.lm.sigma0; space.n_nodes()], cfg.lm.sigma_min)?;
    let history_path = dir.join(HISTORY);
    let file = fs::File::create(&history_path).map_err(RunError::io(format!("creating {}", history_path.display())))?;
    let mut log = std::io::BufWriter::new(file);
    let mut log_err = None;
    let outcome = run_lm(&space, sigma0, &data, &cfg.lm, truth.as_deref(), |r: &IterationRecord| {
        let line = serde_json::to_string(r).expect("record is serializable");
        if let Err(e) = writeln!(log, "{line}").and_then(|()| log.flush()) {
            log_err.get_or_insert(e);
        }
    })?;
    drop(log);
    if let Some(e) = log_err {
        return Err(RunError::io(format!("writing {}", history_path.display()))(e));
    }

    let mesh = &space.mesh;
    write_field_csv(&dir.join(SIGMA_FINAL), mesh, &outcome.sigma)?;
    let difference: Option<Vec<f64>> = truth
        .as_ref()
        .map(|t| outcome.sigma.iter().zip(t).map(|(a, b)| (a - b).abs()).collect());
    if let Some(d) = &difference {
        write_field_csv(&dir.join(DIFFERENCE), mesh, d)?;
    }
    if cfg.output.vtk {
        let mut fields: Vec<(&str, &[f64])> = vec![("sigma_final", &outcome.sigma)];
        if let (Some(t), Some(d)) = (&truth, &difference) {
            fields.push(("sigma_true", t));
            fields.push(("difference", d));
        }
        write_vtk(&dir.join("reconstruction.vtk"), mesh, &fields)?;
    }
    if cfg.output.png {
        write_heatmap(&dir.join("sigma_final.png"), mesh, &outcome.sigma, SIGMA_RANGE)?;
        if let Some(d) = &difference {
            write_heatmap(&dir.join("difference.png"), mesh, d, DIFFERENCE_RANGE)?;
        }
    }

    let status = match &outcome.status {
        LmStatus::Completed => "completed".to_string(),
        LmStatus::Discrepancy => "discrepancy".to_string(),
        LmStatus::ExactFit => "exact-fit".to_string(),
        LmStatus::Failed(msg) => format!("failed: {msg}"),
    };
    let metrics = Metrics {
        status,
        iterations: outcome.history.len(),
        measurements: indices.iter().map(|i| i + 1).collect(),
        initial_residual: outcome.history.first().map(|r| r.residual),
        final_residual: outcome.final_residual,
        final_rel_error: outcome.final_rel_error,
        warnings: outcome.warnings.clone(),
    };
    write_json(&dir.join(METRICS), &metrics)?;

    let input_dir = dir.join(INPUT_DIR);
    copy_inputs(data_dir, &input_dir, &loaded.manifest)?;
    let mut files = vec![HISTORY.to_string(), METRICS.to_string(), SIGMA_FINAL.to_string()];
    if difference.is_some() {
        files.push(DIFFERENCE.into());
    }
    write_configs(dir, cfg, config_text)?;
    let mut m = manifest("reconstruct", cfg, mesh, &data.bcs, files);
    m.noise_std = loaded.manifest.noise_std;
    m.seeds.noise = loaded.manifest.seeds.noise;
    write_json(&dir.join(MANIFEST), &m)?;

    match outcome.status {
        LmStatus::Failed(msg) => Err(RunError::Reconstruction(msg)),
        _ => Ok(metrics),
    }
}

/// Run the verification suite; fails when any check fails.
pub fn cmd_verify(cfg: &ExperimentConfig, config_text: Option<&str>) -> RunResult<SuiteReport> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    let report = run_suite(cfg.verify);
    write_text(&dir.join("report.txt"), &report.to_text())?;
    write_text(&dir.join("report.json"), &(report.to_json() + "\n"))?;
    write_configs(dir, cfg, config_text)?;
    let mesh = build_disk_mesh(cfg.mesh.n_rings)?;
    let m = manifest(
        "verify",
        cfg,
        &mesh,
        &cfg.boundary_conditions()?,
        vec!["report.txt".into(), "report.json".into()],
    );
    write_json(&dir.join(MANIFEST), &m)?;
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(RunError::VerificationFailed { failed });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshInfo {
    pub n_rings: usize,
    pub nodes: usize,
    pub triangles: usize,
    pub boundary_nodes: usize,
    pub max_edge: f64,
    pub area: f64,
}

/// Describe the reconstruction mesh. With `out`, also write it as text and VTK.
pub fn cmd_mesh_info(cfg: &ExperimentConfig, out: Option<&PathBuf>) -> RunResult<MeshInfo> {
    let mesh = build_disk_mesh(cfg.mesh.n_rings)?;
    if let Some(dir) = out {
        prepare_dir(dir)?;
        write_text(&dir.join(MESH), &mesh.to_text())?;
        write_vtk(&dir.join("mesh.vtk"), &mesh, &[])?;
    }
    Ok(MeshInfo {
        n_rings: mesh.n_rings(),
        nodes: mesh.n_nodes(),
        triangles: mesh.n_triangles(),
        boundary_nodes: mesh.boundary_nodes().len(),
        max_edge: mesh.max_edge_length(),
        area: mesh.total_area(),
    })
}
