//! Small dense-algebra helpers on top of faer: products, row gathers, and a
//! symmetric block factor that is either Cholesky or Bunch–Kaufman.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{Lblt, Solve};
use faer::prelude::ReborrowMut;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

fn par_for(m: usize, n: usize, k: usize) -> Par {
    if (m as f64) * (n as f64) * (k as f64) > 4e6 {
        Par::rayon(0)
    } else {
        Par::Seq
    }
}

/// `dst += alpha · a · b`.
pub fn gemm_add(dst: MatMut<'_, f64>, a: MatRef<'_, f64>, b: MatRef<'_, f64>, alpha: f64) {
    let par = par_for(a.nrows(), b.ncols(), a.ncols());
    matmul(dst, Accum::Add, a, b, alpha, par);
}

/// `a · b`.
pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    let par = par_for(a.nrows(), b.ncols(), a.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, par);
    out
}

/// Rows `idx` of `x`.
pub fn gather_rows(x: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// Columns `idx` of `x`.
pub fn gather_cols(x: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])])
}

/// Submatrix `x[rows, cols]`.
pub fn submatrix(x: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| x[(rows[i], cols[j])])
}

/// `x[idx[i], :] = src[i, :]`.
pub fn scatter_rows(mut x: MatMut<'_, f64>, idx: &[usize], src: MatRef<'_, f64>) {
    for j in 0..src.ncols() {
        for (i, &r) in idx.iter().enumerate() {
            x[(r, j)] = src[(i, j)];
        }
    }
}

/// `(a + aᵀ) / 2` in place.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// Euclidean norm of each column.
pub fn column_norms(a: MatRef<'_, f64>) -> Vec<f64> {
    (0..a.ncols()).map(|j| a.col(j).norm_l2()).collect()
}

pub fn col_vec(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn to_vec(m: MatRef<'_, f64>) -> Vec<f64> {
    assert_eq!(m.ncols(), 1);
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// ‖a − b‖ / ‖b‖.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    d / norm(b).max(f64::MIN_POSITIVE)
}

/// Factorization of a dense symmetric block. The original block is kept for
/// forward application.
#[derive(Clone, Debug)]
pub struct SymFactor {
    dense: Mat<f64>,
    kind: FactorKind,
    logdet: f64,
    negative: usize,
}

#[derive(Clone, Debug)]
enum FactorKind {
    Cholesky(Mat<f64>),
    Indefinite(Lblt<f64>),
}

impl SymFactor {
    /// Cholesky if `prefer_cholesky` and it succeeds, else Bunch–Kaufman.
    pub fn new(dense: Mat<f64>, prefer_cholesky: bool) -> Result<Self> {
        let n = dense.nrows();
        if n == 0 {
            return Ok(SymFactor {
                dense,
                kind: FactorKind::Cholesky(Mat::zeros(0, 0)),
                logdet: 0.0,
                negative: 0,
            });
        }
        if prefer_cholesky {
            if let Ok(llt) = dense.llt(Side::Lower) {
                let l = llt.L().to_owned();
                let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
                return Ok(SymFactor {
                    dense,
                    kind: FactorKind::Cholesky(l),
                    logdet,
                    negative: 0,
                });
            }
        }
        let lblt = dense.lblt(Side::Lower);
        let (logdet, negative) = block_diag_logdet(&lblt)?;
        Ok(SymFactor {
            dense,
            kind: FactorKind::Indefinite(lblt),
            logdet,
            negative,
        })
    }

    pub fn dim(&self) -> usize {
        self.dense.nrows()
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.kind, FactorKind::Cholesky(_))
    }

    /// log|det|.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Number of negative eigenvalues (inertia), exact for the Cholesky path.
    pub fn negative_count(&self) -> usize {
        self.negative
    }

    pub fn dense(&self) -> MatRef<'_, f64> {
        self.dense.as_ref()
    }

    pub fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        mul(self.dense.as_ref(), x)
    }

    pub fn solve_in_place(&self, x: MatMut<'_, f64>) {
        if self.dim() == 0 {
            return;
        }
        match &self.kind {
            FactorKind::Cholesky(l) => {
                let mut x = x;
                let par = par_for(l.nrows(), x.ncols(), l.nrows());
                faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), x.rb_mut(), par);
                faer::linalg::triangular_solve::solve_upper_triangular_in_place(l.transpose(), x.rb_mut(), par);
            }
            FactorKind::Indefinite(f) => f.solve_in_place(x),
        }
    }

    /// Cholesky factor `L` (with `dense = L Lᵀ`); `None` on the indefinite path.
    pub fn sqrt_factor(&self) -> Option<MatRef<'_, f64>> {
        match &self.kind {
            FactorKind::Cholesky(l) => Some(l.as_ref()),
            FactorKind::Indefinite(_) => None,
        }
    }
}

fn block_diag_logdet(f: &Lblt<f64>) -> Result<(f64, usize)> {
    let d = f.B_diag();
    let s = f.B_subdiag();
    let n = d.dim();
    let (mut logdet, mut neg) = (0.0, 0usize);
    let mut k = 0;
    while k < n {
        if k + 1 < n && s[k] != 0.0 {
            let (a, b, c) = (d[k], s[k], d[k + 1]);
            let det = a * c - b * b;
            if det == 0.0 || !det.is_finite() {
                return Err(Error::numerical("zero pivot in symmetric indefinite factorization"));
            }
            logdet += det.abs().ln();
            // A 2×2 pivot with negative determinant has one eigenvalue of each sign.
            neg += if det < 0.0 { 1 } else if a < 0.0 { 2 } else { 0 };
            k += 2;
        } else {
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::numerical("zero pivot in symmetric indefinite factorization"));
            }
            logdet += d[k].abs().ln();
            neg += usize::from(d[k] < 0.0);
            k += 1;
        }
    }
    Ok((logdet, neg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indefinite_factor_inertia_and_solve() {
        let a = Mat::from_fn(3, 3, |i, j| [[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, -3.0]][i][j]);
        let f = SymFactor::new(a.clone(), true).unwrap();
        assert!(!f.is_cholesky());
        assert_eq!(f.negative_count(), 2);
        assert!((f.logdet() - 12f64.ln()).abs() < 1e-14);
        let b = col_vec(&[1.0, 2.0, 3.0]);
        let mut x = b.clone();
        f.solve_in_place(x.as_mut());
        let r = mul(a.as_ref(), x.as_ref());
        assert!(rel_err(&to_vec(r.as_ref()), &to_vec(b.as_ref())) < 1e-14);
    }

    #[test]
    fn cholesky_path() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { 4.0 } else { 1.0 });
        let f = SymFactor::new(a.clone(), true).unwrap();
        assert!(f.is_cholesky());
        assert!((f.logdet() - 15f64.ln()).abs() < 1e-14);
        let l = f.sqrt_factor().unwrap();
        let llt = mul(l, l.transpose());
        assert!((llt - a).norm_l2() < 1e-14);
    }

    #[test]
    fn singular_block_is_reported() {
        let a = Mat::<f64>::zeros(2, 2);
        assert!(SymFactor::new(a, false).is_err());
    }
}
