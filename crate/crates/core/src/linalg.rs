//! Small dense linear-algebra helpers shared by the pipelines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{CMatrix, Error, RMatrix, RVector, Result, C64};

/// Cached Cholesky factorization of a symmetric positive definite matrix.
///
/// The matrix may be stored as a symmetric permutation of a block diagonal
/// matrix, `A[i][j] = B[perm[i]][perm[j]]`, in which case every operation
/// works block by block. The inverse is never formed except on request.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    blocks: Vec<FactorBlock>,
    perm: Option<Vec<usize>>,
    dim: usize,
    cond_estimate: f64,
}

#[derive(Clone, Debug)]
struct FactorBlock {
    offset: usize,
    mat: RMatrix,
    chol: Cholesky<f64, Dyn>,
}

fn factor_block(m: RMatrix, what: &'static str) -> Result<(Cholesky<f64, Dyn>, f64, f64)> {
    let chol = Cholesky::new(m).ok_or(Error::IllConditioned {
        what,
        cond: f64::INFINITY,
    })?;
    let (lo, hi) = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
    Ok((chol, lo, hi))
}

impl SpdFactor {
    /// Factorizes `m`, rejecting matrices that are not numerically positive
    /// definite or whose condition estimate exceeds `max_cond`.
    pub fn new(m: RMatrix, what: &'static str, max_cond: f64) -> Result<Self> {
        Self::block_diagonal(vec![m], None, what, max_cond)
    }

    /// Factorizes `P blkdiag(blocks) Pᵀ` without assembling it.
    pub fn block_diagonal(
        blocks: Vec<RMatrix>,
        perm: Option<Vec<usize>>,
        what: &'static str,
        max_cond: f64,
    ) -> Result<Self> {
        let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
        if let Some(p) = &perm {
            let mut seen = vec![false; dim];
            if p.len() != dim || p.iter().any(|&i| i >= dim || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::InvalidParameter(format!("{what}: permutation does not match the blocks")));
            }
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let mut offset = 0;
        let mut out = Vec::with_capacity(blocks.len());
        for mat in blocks {
            if !mat.is_square() {
                return Err(Error::InvalidParameter(format!("{what}: blocks must be square")));
            }
            let (chol, l, h) = factor_block(mat.clone(), what)?;
            lo = lo.min(l);
            hi = hi.max(h);
            let n = mat.nrows();
            out.push(FactorBlock { offset, mat, chol });
            offset += n;
        }
        // squared ratio of the factor's diagonal: a lower bound on cond(m)
        let cond_estimate = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
        if !cond_estimate.is_finite() || cond_estimate > max_cond {
            return Err(Error::IllConditioned {
                what,
                cond: cond_estimate,
            });
        }
        Ok(SpdFactor {
            blocks: out,
            perm,
            dim,
            cond_estimate,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Index of the diagonal block each coordinate belongs to.
    pub fn block_labels(&self) -> Vec<usize> {
        let mut nat = vec![0; self.dim];
        for (b, blk) in self.blocks.iter().enumerate() {
            nat[blk.offset..blk.offset + blk.mat.nrows()].fill(b);
        }
        match &self.perm {
            None => nat,
            Some(p) => p.iter().map(|&pi| nat[pi]).collect(),
        }
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    fn gather(&self, b: &RVector) -> RVector {
        match &self.perm {
            None => b.clone(),
            Some(p) => {
                let mut y = RVector::zeros(self.dim);
                for (i, &pi) in p.iter().enumerate() {
                    y[pi] = b[i];
                }
                y
            }
        }
    }

    fn scatter(&self, y: RVector) -> RVector {
        match &self.perm {
            None => y,
            Some(p) => RVector::from_iterator(self.dim, p.iter().map(|&pi| y[pi])),
        }
    }

    fn per_block(&self, b: &RVector, f: impl Fn(&FactorBlock, RVector) -> RVector) -> RVector {
        let y = self.gather(b);
        let mut out = RVector::zeros(self.dim);
        for blk in &self.blocks {
            let n = blk.mat.nrows();
            let part = f(blk, y.rows(blk.offset, n).into_owned());
            out.rows_mut(blk.offset, n).copy_from(&part);
        }
        self.scatter(out)
    }

    pub fn solve(&self, b: &RVector) -> RVector {
        self.per_block(b, |blk, v| blk.chol.solve(&v))
    }

    pub fn solve_mat(&self, b: &RMatrix) -> RMatrix {
        let mut out = RMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            out.set_column(j, &self.solve(&b.column(j).into_owned()));
        }
        out
    }

    /// `A v` using the stored blocks.
    pub fn apply(&self, v: &RVector) -> RVector {
        self.per_block(v, |blk, x| &blk.mat * x)
    }

    /// Factorization of `alpha I + beta A` with the same structure.
    pub fn shifted(&self, alpha: f64, beta: f64, what: &'static str) -> Result<SpdFactor> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let n = b.mat.nrows();
                RMatrix::identity(n, n) * alpha + &b.mat * beta
            })
            .collect();
        SpdFactor::block_diagonal(blocks, self.perm.clone(), what, f64::INFINITY)
    }

    fn assemble(&self, f: impl Fn(&FactorBlock) -> RMatrix) -> RMatrix {
        let mut nat = RMatrix::zeros(self.dim, self.dim);
        for blk in &self.blocks {
            let n = blk.mat.nrows();
            nat.view_mut((blk.offset, blk.offset), (n, n)).copy_from(&f(blk));
        }
        match &self.perm {
            None => nat,
            Some(p) => RMatrix::from_fn(self.dim, self.dim, |i, j| nat[(p[i], p[j])]),
        }
    }

    /// The factored matrix.
    pub fn matrix(&self) -> RMatrix {
        self.assemble(|b| b.mat.clone())
    }

    /// Explicit inverse. Only for reference paths and tests.
    pub fn inverse(&self) -> RMatrix {
        self.assemble(|b| b.chol.inverse())
    }
}

/// Real lift `[[Re A, -Im A], [Im A, Re A]]` of a complex matrix.
///
/// For Hermitian `A` and `v = [Re x; Im x]`, `vᵀ lift(A) v = xᴴ A x`.
pub fn real_lift(a: &CMatrix) -> RMatrix {
    let (r, c) = a.shape();
    let mut out = RMatrix::zeros(2 * r, 2 * c);
    for j in 0..c {
        for i in 0..r {
            let z = a[(i, j)];
            out[(i, j)] = z.re;
            out[(i + r, j + c)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
        }
    }
    out
}

/// Symmetrizes in place: `m <- (m + mᵀ) / 2`.
pub fn symmetrize(m: &mut RMatrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Eigenvalue-based condition number of a Hermitian positive definite matrix.
pub fn hermitian_condition(a: &CMatrix) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_eigenvalue(m: &RMatrix) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Right pseudo-inverse `G = Hᴴ (H Hᴴ)⁻¹` of a wide channel matrix, so that
/// `H G = I` and `G b` is the minimum-norm solution of `H x = b`.
#[derive(Clone, Debug)]
pub struct RightInverse {
    pub g: CMatrix,
    /// `(H Hᴴ)⁻¹`, which equals `Gᴴ G`.
    pub gram_inv: CMatrix,
    pub cond: f64,
}

pub fn right_inverse(h: &CMatrix, max_cond: f64) -> Result<RightInverse> {
    let gram = h * h.adjoint();
    let cond = hermitian_condition(&gram);
    if !cond.is_finite() || cond > max_cond {
        return Err(Error::IllConditioned {
            what: "H·Hᴴ",
            cond,
        });
    }
    let gram_inv = gram
        .try_inverse()
        .ok_or(Error::IllConditioned {
            what: "H·Hᴴ",
            cond: f64::INFINITY,
        })?;
    let g = h.adjoint() * &gram_inv;
    Ok(RightInverse { g, gram_inv, cond })
}

pub fn frobenius_sq(x: &CMatrix) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

pub fn diag_c(v: &[C64]) -> CMatrix {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_lift_preserves_hermitian_form() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.5, 0.3), C64::new(0.5, -0.3), C64::new(1.0, 0.0)],
        );
        let x = [C64::new(0.7, -1.1), C64::new(-0.2, 0.4)];
        let xv = DVector::from_column_slice(&x);
        let direct = (xv.adjoint() * &a * &xv)[(0, 0)];
        let v = RVector::from_vec(vec![x[0].re, x[1].re, x[0].im, x[1].im]);
        let lifted = (v.transpose() * real_lift(&a) * &v)[(0, 0)];
        assert!((direct.re - lifted).abs() < 1e-12);
        assert!(direct.im.abs() < 1e-12);
    }

    #[test]
    fn right_inverse_is_exact_and_min_norm() {
        let h = CMatrix::from_row_slice(
            2,
            3,
            &[
                C64::new(1.0, 0.2),
                C64::new(-0.3, 0.5),
                C64::new(0.1, 0.0),
                C64::new(0.0, -1.0),
                C64::new(0.4, 0.4),
                C64::new(1.2, 0.1),
            ],
        );
        let ri = right_inverse(&h, 1e8).unwrap();
        let id = &h * &ri.g;
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - C64::new(e, 0.0)).norm() < 1e-12);
            }
        }
        // GᴴG = (HHᴴ)⁻¹
        let diff = ri.g.adjoint() * &ri.g - &ri.gram_inv;
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn spd_factor_rejects_indefinite() {
        let m = RMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdFactor::new(m, "test", 1e12).is_err());
        let m = RMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = SpdFactor::new(m.clone(), "test", 1e12).unwrap();
        let b = RVector::from_vec(vec![1.0, -1.0]);
        let x = f.solve(&b);
        assert!((&m * x - b).norm() < 1e-12);
    }

    #[test]
    fn permuted_blocks_match_dense() {
        let b1 = RMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b2 = RMatrix::from_row_slice(1, 1, &[5.0]);
        let perm = vec![2, 0, 1];
        let f = SpdFactor::block_diagonal(vec![b1, b2], Some(perm), "test", 1e12).unwrap();
        let a = f.matrix();
        assert_eq!(a[(0, 0)], 5.0);
        assert_eq!(a[(1, 2)], 1.0);
        assert_eq!(a[(0, 1)], 0.0);
        let dense = SpdFactor::new(a.clone(), "test", 1e12).unwrap();
        let v = RVector::from_vec(vec![0.3, -1.0, 2.0]);
        assert!((f.solve(&v) - dense.solve(&v)).norm() < 1e-12);
        assert!((f.apply(&v) - &a * &v).norm() < 1e-12);
        assert!((f.inverse() * &a - RMatrix::identity(3, 3)).norm() < 1e-12);
        let s = f.shifted(2.0, 0.5, "s").unwrap();
        let want = RMatrix::identity(3, 3) * 2.0 + &a * 0.5;
        assert!((s.matrix() - want).norm() < 1e-12);
        assert_eq!(f.block_labels(), vec![1, 0, 0]);
        assert!(SpdFactor::block_diagonal(vec![RMatrix::identity(2, 2)], Some(vec![0, 0]), "p", 1e12).is_err());
    }
}
