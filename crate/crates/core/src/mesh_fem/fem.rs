use super::mesh::{TriMesh, LOCATE_TOL};
use crate::error::{Error, Result};
use crate::sparse::SparseMat;

/// Weights below this magnitude are dropped from projector rows.
const WEIGHT_EPS: f64 = 1e-12;

/// Lumped mass diagonal `h` and stiffness matrix `G` for piecewise-linear elements.
#[derive(Clone, Debug)]
pub struct FemMatrices {
    /// Row sums of the consistent mass matrix; `h_i` is the area attached to vertex `i`.
    pub h: Vec<f64>,
    pub g: SparseMat,
}

impl FemMatrices {
    pub fn n(&self) -> usize {
        self.h.len()
    }

    /// The lumped mass matrix `diag(h)`.
    pub fn c(&self) -> SparseMat {
        SparseMat::from_diag(&self.h)
    }
}

/// Element matrices of a linear triangle: `(area, stiffness, consistent mass)`.
pub fn element_matrices(p: [[f64; 2]; 3]) -> Result<(f64, [[f64; 3]; 3], [[f64; 3]; 3])> {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    if !(area.abs() > 0.0) {
        return Err(Error::DegenerateMesh("zero-area triangle".into()));
    }
    let area_abs = area.abs();
    // gradient of basis i is (b_i, c_i) / (2 area)
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let mut k = [[0.0; 3]; 3];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area_abs);
            m[i][j] = area_abs / if i == j { 6.0 } else { 12.0 };
        }
    }
    Ok((area_abs, k, m))
}

/// Assembles `h` (lumped mass) and `G` (stiffness).
pub fn assemble_fem(mesh: &TriMesh) -> Result<FemMatrices> {
    let n = mesh.n_vertices();
    let mut h = vec![0.0; n];
    let mut trip = Vec::with_capacity(9 * mesh.triangles().len());
    for tri in mesh.triangles() {
        let pts = [mesh.vertices()[tri[0]], mesh.vertices()[tri[1]], mesh.vertices()[tri[2]]];
        let (area, k, _) = element_matrices(pts)?;
        for a in 0..3 {
            h[tri[a]] += area / 3.0;
            for b in 0..3 {
                trip.push((tri[a], tri[b], k[a][b]));
            }
        }
    }
    let g = SparseMat::from_triplets(n, n, &trip)?;
    Ok(FemMatrices { h, g })
}

/// Observation matrix: row `r` holds the barycentric weights of `locations[r]`.
pub fn projector(mesh: &TriMesh, locations: &[[f64; 2]]) -> Result<SparseMat> {
    let mut trip = Vec::with_capacity(3 * locations.len());
    for (r, &p) in locations.iter().enumerate() {
        let (t, w) = mesh.locate(p).ok_or(Error::OutsideMesh {
            index: r,
            x: p[0],
            y: p[1],
        })?;
        let mut w = w.map(|l| if l < WEIGHT_EPS { 0.0 } else { l });
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|l| *l /= s);
        for (k, &wk) in w.iter().enumerate() {
            if wk > 0.0 {
                trip.push((r, mesh.triangles()[t][k], wk));
            }
        }
    }
    debug_assert!(LOCATE_TOL > 0.0);
    SparseMat::from_triplets(locations.len(), mesh.n_vertices(), &trip)
}
