//! Stationary covariance kernels with a nugget and analytic θ-derivatives.
//!
//! Every family is written as a function φ(s) of the squared scaled distance
//! `s = ‖x − y‖²_θ`, so a length-parameter derivative is `φ'(s) · ∂s/∂θ_i`
//! and only `φ'` differs between families.

use faer::Mat;

use crate::error::{Error, Result};
use crate::geom::{Point, PointSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// `(1 + s / 2α)^(−α)`.
    RationalQuadratic { alpha: f64 },
    /// Matérn ν = 1/2: `e^(−r)`.
    Matern12,
    /// Matérn ν = 3/2: `(1 + √3 r) e^(−√3 r)`.
    Matern32,
    /// Matérn ν = 5/2: `(1 + √5 r + 5r²/3) e^(−√5 r)`.
    Matern52,
}

impl Family {
    /// Correlation as a function of the squared scaled distance.
    pub fn phi(self, s: f64) -> f64 {
        match self {
            Family::RationalQuadratic { alpha } => (1.0 + s / (2.0 * alpha)).powf(-alpha),
            Family::Matern12 => (-s.sqrt()).exp(),
            Family::Matern32 => {
                let a = 3f64.sqrt() * s.sqrt();
                (1.0 + a) * (-a).exp()
            }
            Family::Matern52 => {
                let a = 5f64.sqrt() * s.sqrt();
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        }
    }

    /// `dφ/ds`. For Matérn ν = 1/2 this is singular at `s = 0`; callers only
    /// use it multiplied by `∂s/∂θ`, which vanishes there, so 0 is returned.
    pub fn dphi_ds(self, s: f64) -> f64 {
        match self {
            Family::RationalQuadratic { alpha } => -0.5 * (1.0 + s / (2.0 * alpha)).powf(-alpha - 1.0),
            Family::Matern12 => {
                if s == 0.0 {
                    0.0
                } else {
                    let r = s.sqrt();
                    -(-r).exp() / (2.0 * r)
                }
            }
            Family::Matern32 => -1.5 * (-(3f64.sqrt()) * s.sqrt()).exp(),
            Family::Matern52 => {
                let a = 5f64.sqrt() * s.sqrt();
                -(5.0 / 6.0) * (1.0 + a) * (-a).exp()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::RationalQuadratic { .. } => "rq",
            Family::Matern12 => "matern12",
            Family::Matern32 => "matern32",
            Family::Matern52 => "matern52",
        }
    }
}

/// How lengths enter the scaled distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anisotropy {
    /// `dx²/θ₁² + dy²/θ₂²`; θ starts with two lengths.
    PerAxis,
    /// `d²/ρ²`; θ starts with one length.
    Isotropic,
}

impl Anisotropy {
    pub fn n_lengths(self) -> usize {
        match self {
            Anisotropy::PerAxis => 2,
            Anisotropy::Isotropic => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Nugget {
    /// Held at the given value.
    Fixed(f64),
    /// Estimated as the last θ component, bounded below.
    Free { lower: f64 },
}

/// Default lower bound for an estimated nugget.
pub const DEFAULT_NUGGET_LOWER: f64 = 1e-5;

/// Which matrix an entry or block belongs to: Σ, ∂Σ/∂θ_i, or `Σ_i + cΣ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Which {
    Sigma,
    Deriv(usize),
    /// `Σ_i + cΣ`: its diagonal is nonzero where Σ_i's vanishes, so blocks
    /// that are structurally singular in Σ_i (e.g. grid points sharing the
    /// coordinate a per-axis scale acts on) become factorable.
    Shifted(usize, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelModel {
    family: Family,
    anisotropy: Anisotropy,
    nugget: Nugget,
    theta: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl KernelModel {
    /// `theta` holds the lengths followed, for a free nugget, by σ_N².
    /// Default bounds are `(0, ∞)` for lengths and `[lower, ∞)` for the nugget.
    pub fn new(family: Family, anisotropy: Anisotropy, nugget: Nugget, theta: Vec<f64>) -> Result<Self> {
        if let Family::RationalQuadratic { alpha } = family {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::input(format!("rational quadratic α must be positive, got {alpha}")));
            }
        }
        let p = anisotropy.n_lengths() + usize::from(matches!(nugget, Nugget::Free { .. }));
        if theta.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: theta.len(),
            });
        }
        let mut lower = vec![0.0; p];
        let upper = vec![f64::INFINITY; p];
        match nugget {
            Nugget::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
                return Err(Error::input(format!("nugget must be a finite non-negative number, got {v}")));
            }
            Nugget::Free { lower: lb } => {
                if !(lb >= 0.0 && lb.is_finite()) {
                    return Err(Error::input(format!("nugget lower bound must be non-negative, got {lb}")));
                }
                lower[p - 1] = lb;
            }
            _ => {}
        }
        let model = KernelModel {
            family,
            anisotropy,
            nugget,
            theta,
            lower,
            upper,
        };
        model.check_theta(&model.theta)?;
        Ok(model)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                got: theta.len(),
            });
        }
        for (i, &t) in theta.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::input(format!("θ[{i}] is not finite")));
            }
            if i < self.n_lengths() && t <= 0.0 {
                return Err(Error::input(format!("length θ[{i}] = {t} must be positive")));
            }
            if t < self.lower[i] || t > self.upper[i] {
                return Err(Error::input(format!(
                    "θ[{i}] = {t} outside bounds [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Same model at a different θ.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        self.check_theta(theta)?;
        let mut m = self.clone();
        m.theta = theta.to_vec();
        Ok(m)
    }

    /// Replace the box bounds; the current θ must satisfy them.
    pub fn with_bounds(&self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let p = self.p();
        if lower.len() != p || upper.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: lower.len().min(upper.len()),
            });
        }
        let mut m = self.clone();
        m.lower = lower;
        m.upper = upper;
        m.check_theta(&m.theta)?;
        Ok(m)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn anisotropy(&self) -> Anisotropy {
        self.anisotropy
    }

    pub fn nugget_mode(&self) -> Nugget {
        self.nugget
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Number of free parameters p.
    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn n_lengths(&self) -> usize {
        self.anisotropy.n_lengths()
    }

    /// Current σ_N².
    pub fn nugget(&self) -> f64 {
        match self.nugget {
            Nugget::Fixed(v) => v,
            Nugget::Free { .. } => self.theta[self.p() - 1],
        }
    }

    /// Index of the nugget within θ, if it is estimated.
    pub fn nugget_index(&self) -> Option<usize> {
        matches!(self.nugget, Nugget::Free { .. }).then(|| self.p() - 1)
    }

    /// Squared scaled distance ‖x − y‖²_θ.
    pub fn scaled_sq(&self, x: Point, y: Point) -> f64 {
        let dx = x[0] - y[0];
        let dy = x[1] - y[1];
        match self.anisotropy {
            Anisotropy::PerAxis => {
                dx * dx / (self.theta[0] * self.theta[0]) + dy * dy / (self.theta[1] * self.theta[1])
            }
            Anisotropy::Isotropic => (dx * dx + dy * dy) / (self.theta[0] * self.theta[0]),
        }
    }

    /// Kernel value without the nugget.
    pub fn correlation(&self, x: Point, y: Point) -> f64 {
        self.family.phi(self.scaled_sq(x, y))
    }

    /// K(x, y; θ), with the nugget added when the locations coincide.
    pub fn eval(&self, x: Point, y: Point) -> f64 {
        self.entry(Which::Sigma, x, y, x == y)
    }

    /// ∂K(x, y; θ)/∂θ_i.
    pub fn eval_dtheta(&self, i: usize, x: Point, y: Point) -> Result<f64> {
        if i >= self.p() {
            return Err(Error::input(format!("parameter index {i} out of range 0..{}", self.p())));
        }
        Ok(self.entry(Which::Deriv(i), x, y, x == y))
    }

    /// Entry of Σ or Σ_i; `same` says whether the two locations are the same
    /// observation, which decides the nugget term.
    #[inline]
    pub fn entry(&self, which: Which, x: Point, y: Point, same: bool) -> f64 {
        match which {
            Which::Sigma => {
                let k = self.correlation(x, y);
                if same {
                    k + self.nugget()
                } else {
                    k
                }
            }
            Which::Deriv(i) => {
                if Some(i) == self.nugget_index() {
                    return if same { 1.0 } else { 0.0 };
                }
                let dx = x[0] - y[0];
                let dy = x[1] - y[1];
                let t = self.theta[i];
                let ds = match self.anisotropy {
                    Anisotropy::PerAxis => {
                        let d = if i == 0 { dx } else { dy };
                        -2.0 * d * d / (t * t * t)
                    }
                    Anisotropy::Isotropic => -2.0 * (dx * dx + dy * dy) / (t * t * t),
                };
                if ds == 0.0 {
                    0.0
                } else {
                    self.family.dphi_ds(self.scaled_sq(x, y)) * ds
                }
            }
            Which::Shifted(i, c) => self.entry(Which::Deriv(i), x, y, same) + c * self.entry(Which::Sigma, x, y, same),
        }
    }

    /// Dense block `(rows × cols)` of Σ or Σ_i. The nugget enters only where
    /// the row and column are the same observation index.
    pub fn assemble_block(&self, points: &PointSet, rows: &[usize], cols: &[usize], which: Which) -> Mat<f64> {
        let c = points.coords();
        Mat::from_fn(rows.len(), cols.len(), |a, b| {
            let (i, j) = (rows[a], cols[b]);
            self.entry(which, c[i], c[j], i == j)
        })
    }

    /// Block between arbitrary locations (e.g. proxy points) and observations,
    /// never including the nugget.
    pub fn assemble_cross(&self, xs: &[Point], points: &PointSet, cols: &[usize], which: Which) -> Mat<f64> {
        let c = points.coords();
        Mat::from_fn(xs.len(), cols.len(), |a, b| self.entry(which, xs[a], c[cols[b]], false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_gradient;
    use proptest::prelude::*;

    fn matern32(theta: Vec<f64>, nugget: f64) -> KernelModel {
        KernelModel::new(Family::Matern32, Anisotropy::PerAxis, Nugget::Fixed(nugget), theta).unwrap()
    }

    const FAMILIES: [Family; 4] = [
        Family::RationalQuadratic { alpha: 0.5 },
        Family::Matern12,
        Family::Matern32,
        Family::Matern52,
    ];

    #[test]
    fn closed_form_values() {
        let m = matern32(vec![1.0, 1.0], 1e-4);
        assert!((m.eval([0.3, 0.2], [0.3, 0.2]) - 1.0001).abs() < 1e-15);

        // Isotropic with ρ = 1 so that s is the squared Euclidean distance.
        let rq = KernelModel::new(
            Family::RationalQuadratic { alpha: 0.5 },
            Anisotropy::Isotropic,
            Nugget::Fixed(0.0),
            vec![1.0],
        )
        .unwrap();
        assert!((rq.eval([0.0, 0.0], [3f64.sqrt(), 0.0]) - 0.5).abs() < 1e-15);

        let r = 1.0 / 3f64.sqrt();
        let m = matern32(vec![1.0, 1.0], 0.0);
        assert!((m.eval([0.0, 0.0], [r, 0.0]) - 0.735_758_882_342_884_6).abs() < 1e-12);
    }

    #[test]
    fn diagonal_derivatives() {
        let m = KernelModel::new(
            Family::Matern32,
            Anisotropy::PerAxis,
            Nugget::Free { lower: 1e-5 },
            vec![10.0, 7.0, 1e-4],
        )
        .unwrap();
        let x = [4.0, 5.0];
        assert_eq!(m.eval_dtheta(0, x, x).unwrap(), 0.0);
        assert_eq!(m.eval_dtheta(1, x, x).unwrap(), 0.0);
        assert_eq!(m.eval_dtheta(2, x, x).unwrap(), 1.0);
        assert_eq!(m.eval_dtheta(2, x, [4.0, 6.0]).unwrap(), 0.0);
        assert!(m.eval_dtheta(3, x, x).is_err());
    }

    #[test]
    fn derivative_matches_central_difference() {
        let m = matern32(vec![10.0, 7.0], 0.0);
        let (x, y) = ([1.0, 2.0], [9.0, -3.0]);
        let analytic = m.eval_dtheta(0, x, y).unwrap();
        let h = 1e-5 * 10.0;
        let fd = (m.with_theta(&[10.0 + h, 7.0]).unwrap().eval(x, y) - m.with_theta(&[10.0 - h, 7.0]).unwrap().eval(x, y))
            / (2.0 * h);
        assert!((analytic - fd).abs() <= 1e-6 * analytic.abs());
    }

    #[test]
    fn model_validation() {
        assert!(KernelModel::new(Family::Matern32, Anisotropy::PerAxis, Nugget::Fixed(0.0), vec![1.0]).is_err());
        assert!(KernelModel::new(Family::Matern32, Anisotropy::Isotropic, Nugget::Fixed(-1.0), vec![1.0]).is_err());
        assert!(KernelModel::new(Family::Matern32, Anisotropy::Isotropic, Nugget::Fixed(0.0), vec![0.0]).is_err());
        assert!(
            KernelModel::new(Family::Matern32, Anisotropy::Isotropic, Nugget::Free { lower: 1e-5 }, vec![1.0, 1e-6])
                .is_err()
        );
        assert!(KernelModel::new(
            Family::RationalQuadratic { alpha: 0.0 },
            Anisotropy::Isotropic,
            Nugget::Fixed(0.0),
            vec![1.0]
        )
        .is_err());
    }

    #[test]
    fn blocks_and_nugget_placement() {
        let pts = PointSet::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]).unwrap();
        let m = matern32(vec![2.0, 3.0], 0.5);
        let one = m.assemble_block(&pts, &[2], &[2], Which::Sigma);
        assert_eq!(one[(0, 0)], 1.5);
        let off = m.assemble_block(&pts, &[0, 1], &[2, 3], Which::Sigma);
        for a in 0..2 {
            for b in 0..2 {
                assert!(off[(a, b)] < 1.0);
            }
        }
        let all: Vec<usize> = (0..4).collect();
        let full = m.assemble_block(&pts, &all, &all, Which::Sigma);
        assert!(full.llt(faer::Side::Lower).is_ok());
        // Coincident locations with distinct indices carry no nugget.
        let dup = PointSet::new(vec![[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let b = m.assemble_block(&dup, &[0, 1], &[0, 1], Which::Sigma);
        assert_eq!(b[(0, 1)], 1.0);
        assert_eq!(b[(0, 0)], 1.5);
    }

    fn model_for(family: Family, iso: bool, free: bool, t: &[f64]) -> KernelModel {
        let aniso = if iso { Anisotropy::Isotropic } else { Anisotropy::PerAxis };
        let mut theta = t[..aniso.n_lengths()].to_vec();
        let nugget = if free {
            theta.push(0.01);
            Nugget::Free { lower: 0.0 }
        } else {
            Nugget::Fixed(0.01)
        };
        KernelModel::new(family, aniso, nugget, theta).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 100, rng_seed: proptest::test_runner::RngSeed::Fixed(7), ..ProptestConfig::default() })]

        #[test]
        fn symmetric_and_fd_consistent(
            fam in 0usize..4, iso in any::<bool>(), free in any::<bool>(),
            t1 in 0.5f64..20.0, t2 in 0.5f64..20.0,
            x in prop::array::uniform2(-10.0f64..10.0), y in prop::array::uniform2(-10.0f64..10.0),
        ) {
            let m = model_for(FAMILIES[fam], iso, free, &[t1, t2]);
            prop_assert_eq!(m.eval(x, y), m.eval(y, x));
            for i in 0..m.p() {
                let a = m.eval_dtheta(i, x, y).unwrap();
                prop_assert_eq!(a, m.eval_dtheta(i, y, x).unwrap());
                let theta = m.theta().to_vec();
                let h = 1e-5 * theta[i].abs().max(1e-3);
                let mut step = vec![0.0; m.p()];
                step[i] = h;
                let fd = fd_gradient(
                    |th: &[f64]| m.with_theta(th).map(|mm| mm.eval(x, y)).unwrap_or(f64::NAN),
                    &theta,
                    &step,
                )[i];
                prop_assert!((a - fd).abs() <= 1e-5 * a.abs().max(1.0), "analytic {} fd {}", a, fd);
            }
        }

        #[test]
        fn monotone_decay(fam in 0usize..4, s1 in 0.0f64..25.0, ds in 1e-3f64..5.0) {
            let f = FAMILIES[fam];
            prop_assert!(f.phi(s1 + ds) < f.phi(s1));
        }

        #[test]
        fn random_point_sets_are_pd(
            fam in 0usize..4, seed in any::<u64>(), n in 2usize..256,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts = PointSet::new((0..n).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect()).unwrap();
            let m = KernelModel::new(FAMILIES[fam], Anisotropy::PerAxis, Nugget::Fixed(1e-8), vec![10.0, 7.0]).unwrap();
            let idx: Vec<usize> = (0..n).collect();
            let s = m.assemble_block(&pts, &idx, &idx, Which::Sigma);
            prop_assert!(s.llt(faer::Side::Lower).is_ok());
        }
    }
}
