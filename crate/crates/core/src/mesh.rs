//! Structured triangulations of the unit disk.
//!
//! Ring `j` of an `R`-ring mesh carries `6j` equally spaced nodes at radius
//! `j / R`; the annulus between consecutive rings is split into `6(2j - 1)`
//! triangles. Node sets of the `R`- and `2R`-ring meshes are nested, which the
//! data-simulation path relies on.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Radius tolerance for boundary detection.
pub const BOUNDARY_TOL: f64 = 1e-12;

pub type Point = [f64; 2];

/// Per-triangle area and constant gradients of the three P1 basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeometry {
    pub areas: Vec<f64>,
    pub grads: Vec<[Point; 3]>,
}

impl ElementGeometry {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }
}

/// Exact areas and basis gradients from vertex coordinates.
///
/// Fails on any triangle with non-positive signed area.
pub fn element_geometry(nodes: &[Point], triangles: &[[usize; 3]]) -> Result<ElementGeometry> {
    let mut areas = Vec::with_capacity(triangles.len());
    let mut grads = Vec::with_capacity(triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        let [p0, p1, p2] = tri.map(|i| nodes[i]);
        let area = signed_area(p0, p1, p2);
        if area <= 0.0 || !area.is_finite() {
            return Err(Error::DegenerateTriangle { triangle: t, area });
        }
        let s = 1.0 / (2.0 * area);
        grads.push([
            [(p1[1] - p2[1]) * s, (p2[0] - p1[0]) * s],
            [(p2[1] - p0[1]) * s, (p0[0] - p2[0]) * s],
            [(p0[1] - p1[1]) * s, (p1[0] - p0[0]) * s],
        ]);
        areas.push(area);
    }
    Ok(ElementGeometry { areas, grads })
}

fn signed_area(p0: Point, p1: Point, p2: Point) -> f64 {
    0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
}

/// Conforming triangulation with boundary markers and cached geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_nodes: Vec<usize>,
    is_boundary: Vec<bool>,
    n_rings: usize,
    geometry: ElementGeometry,
}

impl Mesh {
    /// Assemble a mesh from raw parts, validating indices and orientation.
    ///
    /// `boundary_nodes` is authoritative; it is only cross-checked against the
    /// radius criterion.
    pub fn from_parts(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        mut boundary_nodes: Vec<usize>,
        n_rings: usize,
    ) -> Result<Self> {
        let n = nodes.len();
        if let Some(t) = triangles.iter().position(|tri| tri.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!(
                "triangle {t} references a node outside 0..{n}"
            )));
        }
        boundary_nodes.sort_unstable();
        boundary_nodes.dedup();
        let mut is_boundary = vec![false; n];
        for &b in &boundary_nodes {
            if b >= n {
                return Err(Error::InvalidArgument(format!("boundary node {b} out of range")));
            }
            is_boundary[b] = true;
        }
        for (i, p) in nodes.iter().enumerate() {
            let on_circle = norm(*p) >= 1.0 - BOUNDARY_TOL;
            if on_circle != is_boundary[i] {
                return Err(Error::InvalidArgument(format!(
                    "boundary marker of node {i} disagrees with its radius {}",
                    norm(*p)
                )));
            }
        }
        let geometry = element_geometry(&nodes, &triangles)?;
        Ok(Self {
            nodes,
            triangles,
            boundary_nodes,
            is_boundary,
            n_rings,
            geometry,
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.is_boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.is_boundary
    }

    pub fn n_rings(&self) -> usize {
        self.n_rings
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn geometry(&self) -> &ElementGeometry {
        &self.geometry
    }

    pub fn area(&self, t: usize) -> f64 {
        self.geometry.areas[t]
    }

    pub fn grads(&self, t: usize) -> &[Point; 3] {
        &self.geometry.grads[t]
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.areas.iter().sum()
    }

    /// Longest edge over all triangles.
    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|tri| {
                (0..3).map(move |k| {
                    let a = self.nodes[tri[k]];
                    let b = self.nodes[tri[(k + 1) % 3]];
                    norm([a[0] - b[0], a[1] - b[1]])
                })
            })
            .fold(0.0, f64::max)
    }

    /// Number of triangles sharing each undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Interior edges must be shared by two triangles, boundary edges by one.
    pub fn check_conformity(&self) -> Result<()> {
        for ((a, b), count) in self.edge_incidence() {
            let on_boundary = self.is_boundary[a] && self.is_boundary[b];
            let expected = if on_boundary { 1 } else { 2 };
            if count != expected {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) is shared by {count} triangles, expected {expected}"
                )));
            }
        }
        Ok(())
    }

    /// Evaluate a function at every node.
    pub fn interpolate<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Plain-text export: node, triangle and boundary sections.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# powerdensity mesh v1").unwrap();
        writeln!(s, "n_rings {}", self.n_rings).unwrap();
        writeln!(s, "nodes {}", self.nodes.len()).unwrap();
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(s, "{i} {:.16e} {:.16e}", p[0], p[1]).unwrap();
        }
        writeln!(s, "triangles {}", self.triangles.len()).unwrap();
        for (t, tri) in self.triangles.iter().enumerate() {
            writeln!(s, "{t} {} {} {}", tri[0], tri[1], tri[2]).unwrap();
        }
        writeln!(s, "boundary {}", self.boundary_nodes.len()).unwrap();
        for b in &self.boundary_nodes {
            writeln!(s, "{b}").unwrap();
        }
        s
    }

    /// Inverse of [`Mesh::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut it = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let n_rings = section_count(it.next(), "n_rings")?;
        let n_nodes = section_count(it.next(), "nodes")?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let line = it.next().ok_or_else(|| Error::Parse("truncated node section".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 || f[0].parse::<usize>().ok() != Some(i) {
                return Err(Error::Parse(format!("bad node line `{line}`")));
            }
            nodes.push([parse_f64(f[1])?, parse_f64(f[2])?]);
        }
        let n_tri = section_count(it.next(), "triangles")?;
        let mut triangles = Vec::with_capacity(n_tri);
        for t in 0..n_tri {
            let line = it.next().ok_or_else(|| Error::Parse("truncated triangle section".into()))?;
            let f: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad triangle line `{line}`"))))
                .collect::<Result<_>>()?;
            if f.len() != 4 || f[0] != t {
                return Err(Error::Parse(format!("bad triangle line `{line}`")));
            }
            triangles.push([f[1], f[2], f[3]]);
        }
        let n_b = section_count(it.next(), "boundary")?;
        let boundary = (0..n_b)
            .map(|_| {
                let line = it.next().ok_or_else(|| Error::Parse("truncated boundary section".into()))?;
                line.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad boundary line `{line}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(nodes, triangles, boundary, n_rings)
    }

    /// Transfer a nodal field given on `source` to the nodes of `self` by P1
    /// interpolation. Coincident nodes copy values exactly; points slightly
    /// outside the source polygon are extrapolated from the nearest triangle.
    pub fn interpolate_from(&self, source: &Mesh, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != source.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: source.n_nodes(),
                got: values.len(),
            });
        }
        let locator = Locator::new(source);
        Ok(self
            .nodes
            .iter()
            .map(|&p| locator.evaluate(p, values))
            .collect())
    }
}

fn section_count(line: Option<&str>, key: &str) -> Result<usize> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing `{key}` section")))?;
    match line.split_whitespace().collect::<Vec<_>>()[..] {
        [k, v] if k == key => v
            .parse()
            .map_err(|_| Error::Parse(format!("bad count in `{line}`"))),
        _ => Err(Error::Parse(format!("expected `{key} <n>`, got `{line}`"))),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

pub(crate) fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

/// Structured concentric-ring triangulation of the unit disk.
pub fn build_disk_mesh(n_rings: usize) -> Result<Mesh> {
    if n_rings == 0 {
        return Err(Error::InvalidArgument("n_rings must be at least 1".into()));
    }
    let r = n_rings;
    let ring_start = |j: usize| if j == 0 { 0 } else { 1 + 3 * j * (j - 1) };
    let ring_node = |j: usize, k: usize| {
        if j == 0 {
            0
        } else {
            ring_start(j) + k % (6 * j)
        }
    };

    let mut nodes = Vec::with_capacity(1 + 3 * r * (r + 1));
    nodes.push([0.0, 0.0]);
    for j in 1..=r {
        let radius = j as f64 / r as f64;
        for k in 0..6 * j {
            let theta = 2.0 * PI * k as f64 / (6 * j) as f64;
            nodes.push([radius * theta.cos(), radius * theta.sin()]);
        }
    }

    let mut triangles = Vec::with_capacity(6 * r * r);
    let mut push_ccw = |mut tri: [usize; 3], nodes: &[Point]| {
        if signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]) < 0.0 {
            tri.swap(1, 2);
        }
        triangles.push(tri);
    };
    for j in 1..=r {
        for s in 0..6 {
            let outer = |t: usize| ring_node(j, s * j + t);
            let inner = |t: usize| ring_node(j - 1, s * (j - 1) + t);
            for t in 0..j {
                push_ccw([outer(t), outer(t + 1), inner(t)], &nodes);
            }
            for t in 0..j.saturating_sub(1) {
                push_ccw([inner(t), outer(t + 1), inner(t + 1)], &nodes);
            }
        }
    }

    let boundary: Vec<usize> = (ring_start(r)..ring_start(r) + 6 * r).collect();
    // Snap outer ring to the unit circle so the radius criterion agrees exactly.
    for &b in &boundary {
        let p = nodes[b];
        let n = norm(p);
        nodes[b] = [p[0] / n, p[1] / n];
    }
    Mesh::from_parts(nodes, triangles, boundary, r)
}

/// Area of the inscribed polygon covered by an `n_rings` disk mesh.
pub fn disk_mesh_area(n_rings: usize) -> f64 {
    let m = (6 * n_rings) as f64;
    0.5 * m * (2.0 * PI / m).sin()
}

/// Bucket grid over triangle bounding boxes for point location.
struct Locator<'a> {
    mesh: &'a Mesh,
    lo: Point,
    cell: f64,
    dim: usize,
    buckets: Vec<Vec<usize>>,
    node_index: HashMap<(i64, i64), usize>,
}

impl<'a> Locator<'a> {
    fn new(mesh: &'a Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in mesh.nodes() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let dim = ((mesh.n_triangles() as f64).sqrt().ceil() as usize).max(1);
        let cell = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / dim as f64).max(f64::MIN_POSITIVE);
        let mut buckets = vec![Vec::new(); dim * dim];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let pts = tri.map(|i| mesh.nodes()[i]);
            let bx = |d: usize, f: fn(f64, f64) -> f64| pts.iter().map(|p| p[d]).fold(pts[0][d], f);
            let (i0, j0) = Self::cell_of(lo, cell, dim, [bx(0, f64::min), bx(1, f64::min)]);
            let (i1, j1) = Self::cell_of(lo, cell, dim, [bx(0, f64::max), bx(1, f64::max)]);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    buckets[i * dim + j].push(t);
                }
            }
        }
        let node_index = mesh
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, p)| (Self::key(*p), i))
            .collect();
        Self {
            mesh,
            lo,
            cell,
            dim,
            buckets,
            node_index,
        }
    }

    fn key(p: Point) -> (i64, i64) {
        ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)
    }

    fn cell_of(lo: Point, cell: f64, dim: usize, p: Point) -> (usize, usize) {
        let c = |d: usize| (((p[d] - lo[d]) / cell).floor().max(0.0) as usize).min(dim - 1);
        (c(0), c(1))
    }

    fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.mesh.triangles()[t].map(|i| self.mesh.nodes()[i]);
        let area = signed_area(a, b, c);
        [
            signed_area(p, b, c) / area,
            signed_area(a, p, c) / area,
            signed_area(a, b, p) / area,
        ]
    }

    fn evaluate(&self, p: Point, values: &[f64]) -> f64 {
        if let Some(&i) = self.node_index.get(&Self::key(p)) {
            let q = self.mesh.nodes()[i];
            if (q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12 {
                return values[i];
            }
        }
        let (ci, cj) = Self::cell_of(self.lo, self.cell, self.dim, p);
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        let consider = |t: usize, best: &mut Option<(f64, usize, [f64; 3])>| {
            let l = self.barycentric(t, p);
            let score = l.iter().copied().fold(f64::MAX, f64::min);
            if best.is_none_or(|(s, _, _)| score > s) {
                *best = Some((score, t, l));
            }
        };
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (i, j) = (ci as i64 + di, cj as i64 + dj);
                if i < 0 || j < 0 || i >= self.dim as i64 || j >= self.dim as i64 {
                    continue;
                }
                for &t in &self.buckets[i as usize * self.dim + j as usize] {
                    consider(t, &mut best);
                }
            }
        }
        if best.is_none_or(|(s, _, _)| s < -1e-9) {
            for t in 0..self.mesh.n_triangles() {
                consider(t, &mut best);
            }
        }
        // Outside points extrapolate linearly from the nearest triangle.
        let (_, t, l) = best.expect("mesh has at least one triangle");
        let tri = self.mesh.triangles()[t];
        (0..3).map(|k| l[k] * values[tri[k]]).sum()
    }
}
