//! Field files, mesh export and heatmaps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use powerdensity::mesh::Mesh;
use serde::{Deserialize, Serialize};

use crate::error::{RunError, RunResult};

pub const HEATMAP_SIZE: u32 = 512;
/// Colour range for conductivity images.
pub const SIGMA_RANGE: [f64; 2] = [1.0, 10.0];
/// Colour range for difference images.
pub const DIFFERENCE_RANGE: [f64; 2] = [0.0, 3.0];

/// Viridis sampled at nine evenly spaced stops.
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

/// Colour for `s` in `[0, 1]`, linear between the viridis stops.
pub fn colormap(s: f64) -> Rgb<u8> {
    let s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
    let pos = s * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let c = |k: usize| (VIRIDIS[i][k] + f * (VIRIDIS[i + 1][k] - VIRIDIS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn input_err(path: &Path, message: impl Into<String>) -> RunError {
    RunError::Input {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Nodal field as CSV with header `node,x,y,value`. Values carry 17
/// significant digits, so reading the file back is exact.
pub fn write_field_csv(path: &Path, mesh: &Mesh, values: &[f64]) -> RunResult<()> {
    assert_eq!(values.len(), mesh.n_nodes(), "field length must match the mesh");
    let mut w = csv::Writer::from_path(path).map_err(|e| input_err(path, e.to_string()))?;
    let csv_err = |e: csv::Error| input_err(path, e.to_string());
    w.write_record(["node", "x", "y", "value"]).map_err(csv_err)?;
    for (i, (p, v)) in mesh.nodes().iter().zip(values).enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.16e}", p[0]),
            format!("{:.16e}", p[1]),
            format!("{v:.16e}"),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(RunError::io(format!("writing {}", path.display())))
}

/// Read a field written by [`write_field_csv`], checking node order and
/// coordinates against `mesh`.
pub fn read_field_csv(path: &Path, mesh: &Mesh) -> RunResult<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| input_err(path, e.to_string()))?;
    let header = r.headers().map_err(|e| input_err(path, e.to_string()))?;
    if header != vec!["node", "x", "y", "value"] {
        return Err(input_err(path, "expected header node,x,y,value"));
    }
    let mut values = Vec::with_capacity(mesh.n_nodes());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| input_err(path, e.to_string()))?;
        let num = |k: usize| -> RunResult<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| input_err(path, format!("row {}: bad column {k}", row + 1)))
        };
        let node: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| input_err(path, format!("row {}: bad node index", row + 1)))?;
        if node != row || node >= mesh.n_nodes() {
            return Err(input_err(path, format!("row {}: node {node} out of order", row + 1)));
        }
        let p = mesh.nodes()[node];
        if (num(1)? - p[0]).abs() > 1e-12 || (num(2)? - p[1]).abs() > 1e-12 {
            return Err(input_err(path, format!("node {node}: coordinates do not match the mesh")));
        }
        values.push(num(3)?);
    }
    if values.len() != mesh.n_nodes() {
        return Err(input_err(
            path,
            format!("{} rows for a mesh with {} nodes", values.len(), mesh.n_nodes()),
        ));
    }
    Ok(values)
}

/// Legacy ASCII VTK unstructured grid with one point-data scalar per field.
pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &[(&str, &[f64])]) -> RunResult<()> {
    let mut s = String::new();
    let n = mesh.n_nodes();
    let nt = mesh.n_triangles();
    s.push_str("# vtk DataFile Version 3.0\npowerdensity fields\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {n} double").unwrap();
    for p in mesh.nodes() {
        writeln!(s, "{:.16e} {:.16e} 0", p[0], p[1]).unwrap();
    }
    writeln!(s, "CELLS {nt} {}", 4 * nt).unwrap();
    for t in mesh.triangles() {
        writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(s, "CELL_TYPES {nt}").unwrap();
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !fields.is_empty() {
        writeln!(s, "POINT_DATA {n}").unwrap();
    }
    for (name, values) in fields {
        assert_eq!(values.len(), n, "field `{name}` length must match the mesh");
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for v in *values {
            writeln!(s, "{v:.16e}").unwrap();
        }
    }
    fs::write(path, s).map_err(RunError::io(format!("writing {}", path.display())))
}

/// Rasterize a nodal field over `[-1, 1]²` with a fixed colour range.
/// Pixels outside the mesh stay white.
pub fn render_heatmap(mesh: &Mesh, values: &[f64], range: [f64; 2], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let px = 2.0 / f64::from(size);
    let to_col = |x: f64| (x + 1.0) / px - 0.5;
    let to_row = |y: f64| (1.0 - y) / px - 0.5;
    let nodes = mesh.nodes();
    for t in mesh.triangles() {
        let [a, b, c] = t.map(|i| nodes[i]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let xs = [a[0], b[0], c[0]];
        let ys = [a[1], b[1], c[1]];
        let lo = |v: [f64; 3], f: &dyn Fn(f64) -> f64| v.iter().map(|&z| f(z)).fold(f64::INFINITY, f64::min);
        let hi = |v: [f64; 3], f: &dyn Fn(f64) -> f64| v.iter().map(|&z| f(z)).fold(f64::NEG_INFINITY, f64::max);
        let clip = |v: f64| v.clamp(0.0, f64::from(size - 1));
        let (c0, c1) = (clip(lo(xs, &to_col).ceil()) as u32, clip(hi(xs, &to_col).floor()) as u32);
        let (r0, r1) = (clip(lo(ys, &to_row).ceil()) as u32, clip(hi(ys, &to_row).floor()) as u32);
        for row in r0..=r1 {
            let y = 1.0 - (f64::from(row) + 0.5) * px;
            for col in c0..=c1 {
                let x = -1.0 + (f64::from(col) + 0.5) * px;
                let l1 = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
                let l2 = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
                let l0 = 1.0 - l1 - l2;
                let eps = -1e-12;
                if l0 < eps || l1 < eps || l2 < eps {
                    continue;
                }
                let v = l0 * values[t[0]] + l1 * values[t[1]] + l2 * values[t[2]];
                img.put_pixel(col, row, colormap((v - range[0]) / (range[1] - range[0])));
            }
        }
    }
    img
}

pub fn write_heatmap(path: &Path, mesh: &Mesh, values: &[f64], range: [f64; 2]) -> RunResult<()> {
    render_heatmap(mesh, values, range, HEATMAP_SIZE)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| input_err(path, e.to_string()))
}

/// Contents of `manifest.json` in every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Resolved configuration file inside the directory.
    pub config: String,
    pub seeds: Seeds,
    pub mesh: MeshSummary,
    /// Boundary-condition descriptors, in file order.
    pub bcs: Vec<String>,
    pub noise_std: Option<f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub noise: u64,
    pub verify: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub n_rings: usize,
    pub nodes: usize,
    pub triangles: usize,
    pub sim_n_rings: Option<usize>,
}

impl MeshSummary {
    pub fn of(mesh: &Mesh, sim_n_rings: Option<usize>) -> Self {
        Self {
            n_rings: mesh.n_rings(),
            nodes: mesh.n_nodes(),
            triangles: mesh.n_triangles(),
            sim_n_rings,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> RunResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value is serializable");
    s.push('\n');
    fs::write(path, s).map_err(RunError::io(format!("writing {}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> RunResult<T> {
    let text = fs::read_to_string(path).map_err(RunError::io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use powerdensity::mesh::build_disk_mesh;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_disk_mesh(3).unwrap();
        let v: Vec<f64> = (0..mesh.n_nodes()).map(|i| (i as f64).sqrt() * std::f64::consts::PI - 1e-300).collect();
        let p = dir.path().join("f.csv");
        write_field_csv(&p, &mesh, &v).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("node,x,y,value\n0,"));
        assert_eq!(read_field_csv(&p, &mesh).unwrap(), v);
        let other = build_disk_mesh(4).unwrap();
        assert!(read_field_csv(&p, &other).is_err());
    }

    #[test]
    fn vtk_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_disk_mesh(1).unwrap();
        let v = vec![1.0; 7];
        let p = dir.path().join("f.vtk");
        write_vtk(&p, &mesh, &[("sigma", &v), ("diff", &v)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("POINTS 7 double"));
        assert!(text.contains("CELLS 6 24"));
        assert!(text.contains("POINT_DATA 7"));
        assert_eq!(text.matches("SCALARS").count(), 2);
    }

    #[test]
    fn heatmap_covers_disk_only() {
        let mesh = build_disk_mesh(6).unwrap();
        let v = vec![10.0; mesh.n_nodes()];
        let img = render_heatmap(&mesh, &v, SIGMA_RANGE, 64);
        assert_eq!(img.get_pixel(0, 0), &Rgb([255, 255, 255]));
        assert_eq!(img.get_pixel(32, 32), &Rgb([253, 231, 37]));
        assert_eq!(colormap(-1.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(f64::NAN), Rgb([68, 1, 84]));
    }
}
