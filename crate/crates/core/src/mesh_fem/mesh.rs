use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Tolerance for accepting a location as inside a triangle (barycentric units).
pub const LOCATE_TOL: f64 = 1e-9;

/// A planar triangulation with counter-clockwise triangles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

#[derive(Deserialize)]
struct RawMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl TriMesh {
    /// Validates and orients a triangulation.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if triangles.is_empty() {
            return Err(Error::DegenerateMesh("mesh has no triangles".into()));
        }
        let mut used = vec![false; n];
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= n {
                    return Err(Error::DegenerateMesh(format!(
                        "triangle {t} references vertex {v} but only {n} vertices exist"
                    )));
                }
                used[v] = true;
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(a.abs() > 0.0) {
                return Err(Error::DegenerateMesh(format!("triangle {t} has zero area")));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::DegenerateMesh(format!(
                "vertex {v} is not referenced by any triangle"
            )));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// `(xmin, xmax, ymin, ymax)` of the vertices.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            b.0 = b.0.min(v[0]);
            b.1 = b.1.max(v[0]);
            b.2 = b.2.min(v[1]);
            b.3 = b.3.max(v[1]);
        }
        b
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let (x0, x1, y0, y1) = self.bbox();
        (x1 - x0).hypot(y1 - y0)
    }

    /// Longest triangle edge.
    pub fn max_edge(&self) -> f64 {
        let d = |a: usize, b: usize| {
            let (p, q) = (self.vertices[a], self.vertices[b]);
            (p[0] - q[0]).hypot(p[1] - q[1])
        };
        self.triangles
            .iter()
            .map(|&[a, b, c]| d(a, b).max(d(b, c)).max(d(c, a)))
            .fold(0.0, f64::max)
    }

    /// Vertices that do not lie on a boundary edge (an edge used by one triangle only).
    pub fn boundary_flags(&self) -> Vec<bool> {
        let mut edges = std::collections::BTreeMap::new();
        for &[a, b, c] in &self.triangles {
            for (p, q) in [(a, b), (b, c), (c, a)] {
                *edges.entry((p.min(q), p.max(q))).or_insert(0usize) += 1;
            }
        }
        let mut flags = vec![false; self.vertices.len()];
        for ((p, q), count) in edges {
            if count == 1 {
                flags[p] = true;
                flags[q] = true;
            }
        }
        flags
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let area = signed_area(va, vb, vc);
        [
            signed_area(p, vb, vc) / area,
            signed_area(va, p, vc) / area,
            signed_area(va, vb, p) / area,
        ]
    }

    /// Finds a triangle containing `p` and its barycentric weights.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        (0..self.triangles.len()).find_map(|t| {
            let w = self.barycentric(t, p);
            w.iter().all(|&l| l >= -LOCATE_TOL).then_some((t, w))
        })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.locate(p).is_some()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawMesh = serde_json::from_str(s)?;
        Self::new(raw.vertices, raw.triangles)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Structured triangulation of `x_range × y_range` with `nx × ny` vertices in
/// row-major order (x fastest); each cell is split along its rising diagonal.
pub fn make_rect_mesh(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Result<TriMesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::DegenerateMesh(format!(
            "need at least 2 vertices per direction, got {nx}x{ny}"
        )));
    }
    let (x0, x1) = x_range;
    let (y0, y1) = y_range;
    if !(x1 > x0) || !(y1 > y0) || !x0.is_finite() || !x1.is_finite() || !y0.is_finite() || !y1.is_finite() {
        return Err(Error::DegenerateMesh(format!(
            "degenerate range [{x0}, {x1}] x [{y0}, {y1}]"
        )));
    }
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = if j + 1 == ny { y1 } else { y0 + (y1 - y0) * j as f64 / (ny - 1) as f64 };
        for i in 0..nx {
            let x = if i + 1 == nx { x1 } else { x0 + (x1 - x0) * i as f64 / (nx - 1) as f64 };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v00 = j * nx + i;
            let v10 = v00 + 1;
            let v01 = v00 + nx;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    TriMesh::new(vertices, triangles)
}
