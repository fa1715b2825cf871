//! Dirichlet Laplacian eigenvalues of polygons with P1 finite elements.

mod assemble;
mod eigen;
pub mod isospectral;
mod mesh;
pub mod sparse;
mod spectrum;
pub mod validation;

pub use assemble::{assemble, assemble_full, SparseOperatorPair};
pub use eigen::{solve_eigenpairs, EigenOptions, EigenPairs, RESIDUAL_TOL};
pub use mesh::{triangulate, triangulate_with, Mesh, DEFAULT_SMOOTHING_PASSES};
pub use spectrum::Spectrum;

use thiserror::Error;

use crate::geometry::{GeometryError, Polygon};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("mesh size h = {0} must be a positive finite number resolvable in 16 refinements")]
    InvalidMeshSize(f64),
    #[error("h = {h} is too large to resolve the polygon (no interior nodes)")]
    MeshTooCoarse { h: f64 },
    #[error("ear clipping found no ear; polygon is not simple")]
    EarClippingFailed,
    #[error("mesh has no interior nodes")]
    NoInteriorNodes,
    #[error(
        "cannot compute {requested} eigenvalues from {dofs} degrees of freedom (need n < dofs/2)"
    )]
    InvalidEigenCount { requested: usize, dofs: usize },
    #[error("stiffness matrix is not positive definite (row {row}, pivot {pivot})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("eigensolver stopped with {converged}/{requested} pairs converged, worst relative residual {worst_residual:e}")]
    NoConvergence {
        converged: usize,
        requested: usize,
        worst_residual: f64,
    },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T, E = FemError> = std::result::Result<T, E>;

/// First `n` eigenvalues of the assembled pair.
pub fn solve_eigs(ops: &SparseOperatorPair, n: usize) -> Result<Spectrum> {
    let pairs = solve_eigenpairs(ops, n, &EigenOptions::default())?;
    Spectrum::new(pairs.values)
}

/// First `n` eigenvalues on a given mesh.
pub fn spectrum_of_mesh(mesh: &Mesh, n: usize) -> Result<Spectrum> {
    solve_eigs(&assemble(mesh)?, n)
}

/// Mesh size and extrapolation settings for a spectrum computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FemSettings {
    pub h: f64,
    pub extrapolate: bool,
    pub smoothing_passes: usize,
}

impl FemSettings {
    /// Dataset production settings.
    pub const PRODUCTION: FemSettings = FemSettings {
        h: 0.03,
        extrapolate: true,
        smoothing_passes: DEFAULT_SMOOTHING_PASSES,
    };
    /// Fast settings for tests and toy runs.
    pub const FAST: FemSettings = FemSettings {
        h: 0.1,
        extrapolate: false,
        smoothing_passes: DEFAULT_SMOOTHING_PASSES,
    };

    pub fn spectrum(&self, p: &Polygon, n: usize) -> Result<Spectrum> {
        let coarse = spectrum_of_mesh(&triangulate_with(p, self.h, self.smoothing_passes)?, n)?;
        if !self.extrapolate {
            return Ok(coarse);
        }
        let fine = spectrum_of_mesh(
            &triangulate_with(p, self.h / 2.0, self.smoothing_passes)?,
            n,
        )?;
        Spectrum::new(richardson(coarse.values(), fine.values()))
    }
}

/// `(4 λ_{h/2} − λ_h) / 3`, cancelling the O(h²) term. Near-degenerate
/// pairs can swap order, so the result is re-sorted.
pub fn richardson(coarse: &[f64], fine: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// triangulate → assemble → solve, optionally Richardson-extrapolated from h and h/2.
pub fn spectrum_of(p: &Polygon, n: usize, h: f64, extrapolate: bool) -> Result<Spectrum> {
    FemSettings {
        h,
        extrapolate,
        smoothing_passes: DEFAULT_SMOOTHING_PASSES,
    }
    .spectrum(p, n)
}
