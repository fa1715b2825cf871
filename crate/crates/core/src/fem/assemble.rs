use super::mesh::Mesh;
use super::sparse::CsrMatrix;
use super::{FemError, Result};

/// Stiffness and consistent mass matrices restricted to interior nodes.
#[derive(Debug, Clone)]
pub struct SparseOperatorPair {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    /// Mesh node id of every matrix row.
    pub interior: Vec<usize>,
}

impl SparseOperatorPair {
    pub fn dim(&self) -> usize {
        self.interior.len()
    }
}

/// P1 stiffness and mass over all mesh nodes (natural boundary conditions).
pub fn assemble_full(mesh: &Mesh) -> (CsrMatrix, CsrMatrix) {
    let nodes = mesh.nodes();
    let n = nodes.len();
    let mut k = Vec::with_capacity(9 * mesh.triangles().len());
    let mut m = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let p = tri.map(|i| nodes[i]);
        // gradients of the barycentric basis are (b_i, c_i) / 2A
        let b = [p[1].y - p[2].y, p[2].y - p[0].y, p[0].y - p[1].y];
        let c = [p[2].x - p[1].x, p[0].x - p[2].x, p[1].x - p[0].x];
        for i in 0..3 {
            for j in 0..3 {
                let kij = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
                let mij = if i == j { area / 6.0 } else { area / 12.0 };
                k.push((tri[i], tri[j], kij));
                m.push((tri[i], tri[j], mij));
            }
        }
    }
    (
        CsrMatrix::from_triplets(n, k),
        CsrMatrix::from_triplets(n, m),
    )
}

/// Dirichlet problem: boundary rows and columns are removed.
pub fn assemble(mesh: &Mesh) -> Result<SparseOperatorPair> {
    let interior: Vec<usize> = mesh
        .boundary()
        .iter()
        .enumerate()
        .filter(|(_, &b)| !b)
        .map(|(i, _)| i)
        .collect();
    if interior.is_empty() {
        return Err(FemError::NoInteriorNodes);
    }
    let (k, m) = assemble_full(mesh);
    Ok(SparseOperatorPair {
        stiffness: k.principal_submatrix(&interior),
        mass: m.principal_submatrix(&interior),
        interior,
    })
}
