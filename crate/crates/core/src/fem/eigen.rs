//! Smallest eigenpairs of `K u = λ M u` by block Krylov iteration on the
//! shift-inverted operator `K⁻¹ M` (shift 0), with full reorthogonalisation
//! in the M inner product and Rayleigh–Ritz on the projected operator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assemble::SparseOperatorPair;
use super::sparse::{CsrMatrix, EnvelopeCholesky};
use super::{FemError, Result};

/// Relative residual every returned pair must meet:
/// ‖Ku − λMu‖₂ ≤ tol · λ · ‖Mu‖₂.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub block_size: usize,
    pub residual_tol: f64,
    /// Krylov dimension cap; `None` picks `4n + 100`.
    pub max_dim: Option<usize>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            block_size: 4,
            residual_tol: RESIDUAL_TOL,
            max_dim: None,
            seed: 0x5eed_d2e1,
        }
    }
}

/// Eigenvalues (ascending), M-orthonormal eigenvectors as columns, and the
/// relative residual of each pair.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

fn spmm(a: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        a.mul_vec(x.column(c).as_slice(), y.column_mut(c).as_mut_slice());
    }
    y
}

fn m_dot(m: &CsrMatrix, a: &[f64], b: &[f64], tmp: &mut [f64]) -> f64 {
    m.mul_vec(b, tmp);
    a.iter().zip(tmp.iter()).map(|(x, y)| x * y).sum()
}

pub fn solve_eigenpairs(
    ops: &SparseOperatorPair,
    n: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs> {
    let dim = ops.dim();
    if n == 0 || 2 * n >= dim {
        return Err(FemError::InvalidEigenCount {
            requested: n,
            dofs: dim,
        });
    }
    if dim <= DENSE_LIMIT {
        return dense_eigenpairs(ops, n, opts.residual_tol);
    }
    let chol = EnvelopeCholesky::factor(&ops.stiffness)?;
    let mut cap = opts.max_dim.unwrap_or(4 * n + 100);
    loop {
        match krylov(ops, &chol, n, cap, opts) {
            Err(FemError::NoConvergence { .. }) if 2 * cap < dim / 2 => cap *= 2,
            other => return other,
        }
    }
}

/// Systems at or below this size are solved densely.
const DENSE_LIMIT: usize = 600;

fn dense_eigenpairs(ops: &SparseOperatorPair, n: usize, tol: f64) -> Result<EigenPairs> {
    let dim = ops.dim();
    let to_dense = |a: &CsrMatrix| {
        let mut d = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for (j, v) in a.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    };
    let kd = to_dense(&ops.stiffness);
    let md = to_dense(&ops.mass);
    let l = nalgebra::Cholesky::new(md.clone())
        .ok_or(FemError::NotPositiveDefinite { row: 0, pivot: 0.0 })?
        .l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(FemError::NotPositiveDefinite { row: 0, pivot: 0.0 })?;
    let c = &linv * &kd * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vectors = DMatrix::zeros(dim, n);
    for (c, &i) in order[..n].iter().enumerate() {
        vectors.set_column(c, &(linv.transpose() * eig.eigenvectors.column(i)));
    }
    finish(&ops.stiffness, &ops.mass, vectors, tol)
}

/// Rayleigh quotients, residual check, M-normalisation, ascending sort.
fn finish(k: &CsrMatrix, m: &CsrMatrix, u: DMatrix<f64>, tol: f64) -> Result<EigenPairs> {
    let n = u.ncols();
    let ku = spmm(k, &u);
    let mu = spmm(m, &u);
    let mut pairs: Vec<(f64, usize, f64)> = (0..n)
        .map(|c| {
            let num = u.column(c).dot(&ku.column(c));
            let den = u.column(c).dot(&mu.column(c));
            let lambda = num / den;
            let r = (ku.column(c) - mu.column(c) * lambda).norm();
            (lambda, c, r / (lambda * mu.column(c).norm()))
        })
        .collect();
    let worst = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    if !(worst <= tol && pairs.iter().all(|p| p.0 > 0.0)) {
        return Err(FemError::NoConvergence {
            converged: pairs.iter().filter(|p| p.2 <= tol).count(),
            requested: n,
            worst_residual: worst,
        });
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut vectors = DMatrix::zeros(u.nrows(), n);
    let mut tmp = vec![0.0; u.nrows()];
    for (c, pr) in pairs.iter().enumerate() {
        let col = u.column(pr.1);
        let norm = m_dot(m, col.as_slice(), col.as_slice(), &mut tmp).sqrt();
        vectors.set_column(c, &(col / norm));
    }
    Ok(EigenPairs {
        values: pairs.iter().map(|p| p.0).collect(),
        vectors,
        residuals: pairs.iter().map(|p| p.2).collect(),
    })
}

fn krylov(
    ops: &SparseOperatorPair,
    chol: &EnvelopeCholesky,
    n: usize,
    cap: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs> {
    let dim = ops.dim();
    let k = &ops.stiffness;
    let m = &ops.mass;
    let p = opts.block_size.clamp(1, n);
    let cap = cap.min(dim - dim % p).max(n + p);
    let cap = cap - cap % p;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis = DMatrix::<f64>::zeros(dim, cap + p);
    let mut proj = DMatrix::<f64>::zeros(cap + p, cap + p);
    let mut tmp = vec![0.0; dim];
    let mut scratch = Vec::with_capacity(dim);

    // starting block
    let mut start = DMatrix::from_fn(dim, p, |_, _| rng.random::<f64>() - 0.5);
    orthonormalize_block(m, &basis, 0, &mut start, &mut rng, &mut tmp);
    basis.columns_mut(0, p).copy_from(&start);
    let mut width = p;

    let mut ritz_tol = 1e-11;
    let first_check = (2 * n).max(n + 4 * p).min(cap);
    let mut next_check = first_check;

    loop {
        let j0 = width - p;
        let mut w = spmm(m, &basis.columns(j0, p).into_owned());
        chol.solve_many(w.as_mut_slice(), p, &mut scratch);
        for pass in 0..2 {
            let mw = spmm(m, &w);
            let before: f64 = (0..p).map(|c| w.column(c).dot(&mw.column(c))).sum();
            let coef = basis.columns(0, width).tr_mul(&mw);
            w.gemm(-1.0, &basis.columns(0, width), &coef, 1.0);
            let mut block = proj.view_mut((0, j0), (width, p));
            block += &coef;
            // second pass only when the first cancelled most of the block
            let after = before - coef.norm_squared();
            if pass == 0 && after > 0.5 * before {
                break;
            }
        }
        let b = orthonormalize_block(m, &basis, width, &mut w, &mut rng, &mut tmp);
        proj.view_mut((width, j0), (p, p)).copy_from(&b);

        if width >= next_check || width >= cap {
            let h = proj.view((0, 0), (width, width));
            let sym = (&h + h.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let mut order: Vec<usize> = (0..width).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let wanted = &order[..n];
            let tail = width - p;
            let converged = wanted.iter().all(|&i| {
                let theta = eig.eigenvalues[i];
                let y_last = eig.eigenvectors.view((tail, i), (p, 1));
                let est = (&b * y_last).norm();
                theta > 0.0 && est <= ritz_tol * theta
            });
            if converged || width >= cap {
                let mut y = DMatrix::zeros(width, n);
                for (c, &i) in wanted.iter().enumerate() {
                    y.set_column(c, &eig.eigenvectors.column(i));
                }
                let u = basis.columns(0, width) * y;
                match finish(k, m, u, opts.residual_tol) {
                    Ok(pairs) => return Ok(pairs),
                    Err(e) if width >= cap => return Err(e),
                    Err(_) => {}
                }
                ritz_tol *= 0.01;
            }
            next_check = (width + (n / 4).max(2 * p)).min(cap);
        }
        basis.columns_mut(width, p).copy_from(&w);
        width += p;
    }
}

/// M-orthonormalises the columns of `w` (already orthogonal to the first
/// `width` basis columns) by modified Gram–Schmidt. Returns `R` with
/// `w_old = w_new R`. Collapsed columns are replaced by fresh random
/// directions and get a zero column in `R`.
fn orthonormalize_block(
    m: &CsrMatrix,
    basis: &DMatrix<f64>,
    width: usize,
    w: &mut DMatrix<f64>,
    rng: &mut ChaCha8Rng,
    tmp: &mut [f64],
) -> DMatrix<f64> {
    let p = w.ncols();
    let mut r = DMatrix::zeros(p, p);
    for c in 0..p {
        let before = m_dot(m, w.column(c).as_slice(), w.column(c).as_slice(), tmp).sqrt();
        for _ in 0..2 {
            for prev in 0..c {
                let (wp, mut wc) = w.columns_range_pair_mut(prev, c);
                let coef = m_dot(m, wp.as_slice(), wc.as_slice(), tmp);
                wc.axpy(-coef, &wp, 1.0);
                r[(prev, c)] += coef;
            }
        }
        let mut norm = m_dot(m, w.column(c).as_slice(), w.column(c).as_slice(), tmp).sqrt();
        if norm > 1e-10 * before && norm > 0.0 {
            r[(c, c)] = norm;
        } else {
            // breakdown: restart this column from noise
            for _ in 0..8 {
                let fresh = DVector::from_fn(w.nrows(), |_, _| rng.random::<f64>() - 0.5);
                w.set_column(c, &fresh);
                for _ in 0..2 {
                    let mw = {
                        let mut y = DVector::zeros(w.nrows());
                        m.mul_vec(w.column(c).as_slice(), y.as_mut_slice());
                        y
                    };
                    if width > 0 {
                        let coef = basis.columns(0, width).tr_mul(&mw);
                        let mut col = w.column_mut(c);
                        col.gemv(-1.0, &basis.columns(0, width), &coef, 1.0);
                    }
                    for prev in 0..c {
                        let (wp, mut wc) = w.columns_range_pair_mut(prev, c);
                        let coef = m_dot(m, wp.as_slice(), wc.as_slice(), tmp);
                        wc.axpy(-coef, &wp, 1.0);
                    }
                }
                norm = m_dot(m, w.column(c).as_slice(), w.column(c).as_slice(), tmp).sqrt();
                if norm > 1e-8 {
                    break;
                }
            }
        }
        let mut col = w.column_mut(c);
        col /= norm;
    }
    r
}
