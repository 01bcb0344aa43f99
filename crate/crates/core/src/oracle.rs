//! Dense O(n³) reference computations for validating the fast paths.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::dense::{col_vec, dot, mul, to_vec};
use crate::error::{Error, Result};
use crate::geom::PointSet;
use crate::kernel::{KernelModel, Which};

/// Largest n the dense oracle will assemble.
pub const DENSE_LIMIT: usize = 4096;

/// Explicit Σ and Σ_i with the observation vector.
pub struct DenseProblem {
    pub sigma: Mat<f64>,
    pub derivs: Vec<Mat<f64>>,
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
}

impl DenseProblem {
    pub fn new(model: &KernelModel, points: &PointSet, z: &[f64]) -> Result<Self> {
        let n = points.len();
        if n > DENSE_LIMIT {
            return Err(Error::input(format!("dense oracle limited to n ≤ {DENSE_LIMIT}, got {n}")));
        }
        if z.len() != n {
            return Err(Error::Dimension { expected: n, got: z.len() });
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(DenseProblem {
            sigma: model.assemble_block(points, &idx, &idx, Which::Sigma),
            derivs: (0..model.p())
                .map(|i| model.assemble_block(points, &idx, &idx, Which::Deriv(i)))
                .collect(),
            z: z.to_vec(),
            theta: model.theta().to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }
}

pub fn dense_sigma(model: &KernelModel, points: &PointSet) -> Mat<f64> {
    let idx: Vec<usize> = (0..points.len()).collect();
    model.assemble_block(points, &idx, &idx, Which::Sigma)
}

/// Cholesky-based helper holding Σ = LLᵀ.
pub struct DenseChol {
    llt: faer::linalg::solvers::Llt<f64>,
    logdet: f64,
}

impl DenseChol {
    pub fn new(sigma: &Mat<f64>) -> Result<Self> {
        let llt = sigma
            .llt(Side::Lower)
            .map_err(|_| Error::NotPositiveDefinite("dense Cholesky failed".into()))?;
        let l = llt.L();
        let logdet = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(DenseChol { llt, logdet })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        to_vec(self.llt.solve(col_vec(b)).as_ref())
    }

    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        self.llt.solve(b)
    }
}

/// Exact log-likelihood −½zᵀΣ⁻¹z − ½log|Σ| − (n/2)log 2π and its gradient
/// ½zᵀΣ⁻¹Σ_iΣ⁻¹z − ½Tr(Σ⁻¹Σ_i).
pub fn dense_loglik_and_score(problem: &DenseProblem) -> Result<(f64, Vec<f64>)> {
    let n = problem.n() as f64;
    let chol = DenseChol::new(&problem.sigma)?;
    let u = chol.solve(&problem.z);
    let ll = -0.5 * dot(&problem.z, &u) - 0.5 * chol.logdet() - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    let mut grad = Vec::with_capacity(problem.derivs.len());
    for d in &problem.derivs {
        let du = to_vec(mul(d.as_ref(), col_vec(&u).as_ref()).as_ref());
        let trace = dense_trace_solve(&chol, d);
        grad.push(0.5 * dot(&u, &du) - 0.5 * trace);
    }
    Ok((ll, grad))
}

/// Exact log-likelihood only.
pub fn dense_loglik(model: &KernelModel, points: &PointSet, z: &[f64]) -> Result<f64> {
    let sigma = dense_sigma(model, points);
    let chol = DenseChol::new(&sigma)?;
    let u = chol.solve(z);
    let n = z.len() as f64;
    Ok(-0.5 * dot(z, &u) - 0.5 * chol.logdet() - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Tr(Σ⁻¹ A).
pub fn dense_trace_solve(chol: &DenseChol, a: &Mat<f64>) -> f64 {
    let x = chol.solve_mat(a);
    (0..x.nrows()).map(|i| x[(i, i)]).sum()
}

/// Exact Tr(Σ⁻¹Σ_i).
pub fn dense_trace(model: &KernelModel, points: &PointSet, i: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..points.len()).collect();
    let sigma = model.assemble_block(points, &idx, &idx, Which::Sigma);
    let d = model.assemble_block(points, &idx, &idx, Which::Deriv(i));
    Ok(dense_trace_solve(&DenseChol::new(&sigma)?, &d))
}

/// Explicit ½(Σ⁻¹Σ_i + Σ_iΣ⁻¹).
pub fn dense_symmetrized_product(sigma: &Mat<f64>, deriv: &Mat<f64>) -> Result<Mat<f64>> {
    let x = DenseChol::new(sigma)?.solve_mat(deriv);
    let n = x.nrows();
    Ok(Mat::from_fn(n, n, |i, j| 0.5 * (x[(i, j)] + x[(j, i)])))
}

/// Profile log-likelihood of the constant-mean model, in the same form as the
/// fast path: −½log|Σ| − (n/2)log Q + (n/2)(log n − 1 − 2π) with
/// Q = zᵀ(Σ + 𝟏𝟏ᵀ)⁻¹z.
pub fn dense_profile_loglik(model: &KernelModel, points: &PointSet, z: &[f64]) -> Result<f64> {
    let mut sigma = dense_sigma(model, points);
    let n = z.len();
    let logdet = DenseChol::new(&sigma)?.logdet();
    for j in 0..n {
        for i in 0..n {
            sigma[(i, j)] += 1.0;
        }
    }
    let q = dot(z, &DenseChol::new(&sigma)?.solve(z));
    let nf = n as f64;
    Ok(-0.5 * logdet - 0.5 * nf * q.ln() + 0.5 * nf * (nf.ln() - 1.0 - 2.0 * std::f64::consts::PI))
}

/// Exact Gaussian log-likelihood of `z ~ N(μ𝟏, σ²Σ)`.
pub fn dense_loglik_mean_scale(model: &KernelModel, points: &PointSet, z: &[f64], mu: f64, sigma2: f64) -> Result<f64> {
    let sigma = dense_sigma(model, points);
    let chol = DenseChol::new(&sigma)?;
    let r: Vec<f64> = z.iter().map(|v| v - mu).collect();
    let u = chol.solve(&r);
    let n = z.len() as f64;
    Ok(-0.5 * dot(&r, &u) / sigma2
        - 0.5 * (chol.logdet() + n * sigma2.ln())
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Σ₁₂Σ₂₂⁻¹z for test locations `test` given training data.
pub fn dense_conditional_mean(model: &KernelModel, train: &PointSet, test: &PointSet, z: &[f64]) -> Result<Vec<f64>> {
    let sigma = dense_sigma(model, train);
    let u = DenseChol::new(&sigma)?.solve(z);
    Ok(test
        .coords()
        .iter()
        .map(|&x| train.coords().iter().zip(&u).map(|(&y, &ui)| model.eval(x, y) * ui).sum())
        .collect())
}

/// Central finite differences, step `h[i]` in component `i`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64], h: &[f64]) -> Vec<f64> {
    assert_eq!(theta.len(), h.len());
    (0..theta.len())
        .map(|i| {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[i] += h[i];
            tm[i] -= h[i];
            (f(&tp) - f(&tm)) / (2.0 * h[i])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Anisotropy, Family, Nugget};

    #[test]
    fn single_point_closed_form() {
        let pts = PointSet::new(vec![[0.0, 0.0]]).unwrap();
        let m = KernelModel::new(Family::Matern32, Anisotropy::PerAxis, Nugget::Fixed(1e-4), vec![1.0, 1.0]).unwrap();
        let p = DenseProblem::new(&m, &pts, &[1.0]).unwrap();
        let (ll, g) = dense_loglik_and_score(&p).unwrap();
        let expect = -0.5 / 1.0001 - 0.5 * 1.0001f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expect).abs() < 1e-15);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn score_matches_fd_of_dense_loglik() {
        let pts = PointSet::grid(8, 20.0).unwrap();
        let m = KernelModel::new(Family::Matern52, Anisotropy::PerAxis, Nugget::Free { lower: 1e-8 }, vec![6.0, 4.0, 0.05])
            .unwrap();
        let z: Vec<f64> = (0..64).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let (_, g) = dense_loglik_and_score(&DenseProblem::new(&m, &pts, &z).unwrap()).unwrap();
        let h: Vec<f64> = m.theta().iter().map(|t| 1e-5 * t).collect();
        let fd = fd_gradient(|th| dense_loglik(&m.with_theta(th).unwrap(), &pts, &z).unwrap(), m.theta(), &h);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn logdet_is_twice_log_pivots() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.5 });
        let c = DenseChol::new(&a).unwrap();
        let det = 2.0 * 2.0 * 2.0 + 2.0 * 0.125 - 3.0 * 2.0 * 0.25;
        assert!((c.logdet() - f64::ln(det)).abs() < 1e-14);
    }

    #[test]
    fn fd_exact_cases() {
        let lin = fd_gradient(|t| 3.0 * t[0] - 2.0 * t[1], &[1.0, 5.0], &[0.1, 0.1]);
        assert!((lin[0] - 3.0).abs() < 1e-12 && (lin[1] + 2.0).abs() < 1e-12);
        let quad = fd_gradient(|t| t[0] * t[0], &[2.0], &[1e-3]);
        assert!((quad[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn refuses_large_problems() {
        let pts = PointSet::grid(65, 1.0).unwrap();
        let m = KernelModel::new(Family::Matern12, Anisotropy::Isotropic, Nugget::Fixed(0.0), vec![1.0]).unwrap();
        assert!(DenseProblem::new(&m, &pts, &vec![0.0; pts.len()]).is_err());
    }
}
