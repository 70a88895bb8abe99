//! Triangulated planar domains and piecewise-linear finite elements.

mod fem;
mod mesh;

pub use fem::{assemble_fem, element_matrices, projector, FemMatrices};
pub use mesh::{make_rect_mesh, TriMesh, LOCATE_TOL};
